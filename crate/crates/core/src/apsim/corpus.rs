//! Reproducible trace corpus: profiles x episodes with a configured
//! fault mix, parallel across episodes, stable ordering.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode_rng, LoopConfig, Meal, Trace};
use super::fault::{FaultKind, FaultSpec};
use super::patient::PatientProfile;
use super::ApsimError;

/// One slot of the fault mix. `kind: None` produces fault-free
/// episodes. Fractions over all entries must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultMixEntry {
    pub kind: Option<FaultKind>,
    pub fraction: f64,
    /// Kind-specific scalar; ignored for `None` and sensor_freeze.
    pub magnitude: f64,
    /// Fault length in steps; ignored for `None`.
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub profiles: Vec<PatientProfile>,
    pub episodes_per_profile: u32,
    pub horizon: u32,
    pub seed: u64,
    pub fault_mix: Vec<FaultMixEntry>,
    pub loop_config: LoopConfig,
}

/// The default mix: 20% clean episodes, the rest spread over the four
/// fault kinds with magnitudes that reliably reach a hazard.
pub fn default_fault_mix() -> Vec<FaultMixEntry> {
    vec![
        FaultMixEntry {
            kind: None,
            fraction: 0.20,
            magnitude: 0.0,
            duration: 0,
        },
        FaultMixEntry {
            kind: Some(FaultKind::SensorBias),
            fraction: 0.20,
            magnitude: 110.0,
            duration: 120,
        },
        FaultMixEntry {
            kind: Some(FaultKind::SensorFreeze),
            fraction: 0.10,
            magnitude: 0.0,
            duration: 156,
        },
        FaultMixEntry {
            kind: Some(FaultKind::CommandOverwrite),
            fraction: 0.25,
            magnitude: 0.0,
            duration: 84,
        },
        FaultMixEntry {
            kind: Some(FaultKind::CommandScale),
            fraction: 0.25,
            magnitude: 3.0,
            duration: 66,
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub seed: u64,
    pub horizon: u32,
    pub episodes_per_profile: u32,
    pub profile_ids: Vec<String>,
    pub fault_mix: Vec<FaultMixEntry>,
    pub trace_count: usize,
    pub unsafe_fraction: f64,
}

/// Deterministic fault-slot assignment: episode e lands in the mix
/// entry whose cumulative fraction covers (e + 0.5) / episodes, so
/// realized proportions track the configured ones exactly.
fn mix_slot(mix: &[FaultMixEntry], episode: u32, episodes: u32) -> usize {
    let target = (f64::from(episode) + 0.5) / f64::from(episodes);
    let mut cumulative = 0.0;
    for (i, entry) in mix.iter().enumerate() {
        cumulative += entry.fraction;
        if target < cumulative {
            return i;
        }
    }
    mix.len() - 1
}

/// Three daily meals with jittered timing and size.
fn draw_meals(rng: &mut ChaCha8Rng, horizon: u32) -> Vec<Meal> {
    let anchors = [84i64, 150, 222];
    let mut meals = Vec::new();
    for anchor in anchors {
        let step = anchor + rng.gen_range(-12i64..=12);
        if step >= 0 && (step as u32) < horizon {
            meals.push(Meal {
                step: step as u32,
                grams: rng.gen_range(30.0..55.0),
            });
        }
    }
    meals
}

fn draw_fault(rng: &mut ChaCha8Rng, entry: &FaultMixEntry, horizon: u32) -> Option<FaultSpec> {
    let kind = entry.kind?;
    let margin = 36u32;
    let latest = horizon.saturating_sub(entry.duration + margin).max(margin + 1);
    let start = rng.gen_range(margin..latest);
    Some(FaultSpec {
        kind,
        start,
        duration: entry.duration,
        magnitude: entry.magnitude,
    })
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(Vec<Trace>, CorpusMeta), ApsimError> {
    if cfg.profiles.is_empty() {
        return Err(ApsimError::NoProfiles);
    }
    let total_fraction: f64 = cfg.fault_mix.iter().map(|e| e.fraction).sum();
    if (total_fraction - 1.0).abs() > 1e-9 {
        return Err(ApsimError::FaultMixFractions { sum: total_fraction });
    }
    for profile in &cfg.profiles {
        profile.validate()?;
    }
    let jobs: Vec<(usize, u32)> = (0..cfg.profiles.len())
        .flat_map(|p| (0..cfg.episodes_per_profile).map(move |e| (p, e)))
        .collect();
    let traces: Result<Vec<Trace>, ApsimError> = jobs
        .par_iter()
        .map(|&(p_idx, e_idx)| {
            let profile = &cfg.profiles[p_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(p_idx as u64 * 100_000 + u64::from(e_idx) + 1);
            let meals = draw_meals(&mut rng, cfg.horizon);
            let slot = mix_slot(&cfg.fault_mix, e_idx, cfg.episodes_per_profile);
            let fault = draw_fault(&mut rng, &cfg.fault_mix[slot], cfg.horizon);
            let mut trace = run_episode_rng(
                profile,
                cfg.horizon,
                &meals,
                fault.as_ref(),
                &mut rng,
                &cfg.loop_config,
            )?;
            trace.episode = e_idx;
            Ok(trace)
        })
        .collect();
    let traces = traces?;
    let total_steps: usize = traces.iter().map(|t| t.steps.len()).sum();
    let unsafe_steps: usize = traces.iter().map(Trace::unsafe_steps).sum();
    let meta = CorpusMeta {
        seed: cfg.seed,
        horizon: cfg.horizon,
        episodes_per_profile: cfg.episodes_per_profile,
        profile_ids: cfg.profiles.iter().map(|p| p.id.clone()).collect(),
        fault_mix: cfg.fault_mix.clone(),
        trace_count: traces.len(),
        unsafe_fraction: unsafe_steps as f64 / total_steps as f64,
    };
    Ok((traces, meta))
}
