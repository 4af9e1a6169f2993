//! Closed-loop episode simulation, hazard labeling, and trace CSV
//! persistence.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::controller::controller_step;
use super::fault::{FaultKind, FaultSpec};
use super::patient::{step_patient, PatientProfile, SimState};
use super::ApsimError;

/// Loop-level constants shared by every episode of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Controller target, mg/dL.
    pub bgt: f64,
    /// H2 label threshold, mg/dL.
    pub hyper_threshold: f64,
    /// H1 label threshold, mg/dL.
    pub hypo_threshold: f64,
    /// CGM measurement noise, mg/dL (std of zero-mean Gaussian).
    pub sensor_noise_sd: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            bgt: 120.0,
            hyper_threshold: 180.0,
            hypo_threshold: 70.0,
            sensor_noise_sd: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Meal {
    pub step: u32,
    pub grams: f64,
}

pub const HAZARD_NONE: u8 = 0;
pub const HAZARD_H1: u8 = 1;
pub const HAZARD_H2: u8 = 2;

/// Ground-truth label from the true glucose: H1 below the hypo bound,
/// H2 above the hyper bound.
pub fn hazard_label(bg_true: f64, cfg: &LoopConfig) -> u8 {
    if bg_true < cfg.hypo_threshold {
        HAZARD_H1
    } else if bg_true > cfg.hyper_threshold {
        HAZARD_H2
    } else {
        HAZARD_NONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u32,
    pub bg_true: f64,
    pub bg_sensed: f64,
    pub iob: f64,
    pub insulin_rate: f64,
    pub bolus: f64,
    /// Grams ingested at this step.
    pub carbs: f64,
    pub fault_active: bool,
    /// 0 none, 1 H1, 2 H2.
    pub hazard: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub profile_id: String,
    pub episode: u32,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Stable identity used by dataset splits and file names.
    pub fn trace_id(&self) -> String {
        format!("{}_ep{:03}", self.profile_id, self.episode)
    }

    pub fn unsafe_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.hazard != HAZARD_NONE).count()
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for step in &self.steps {
            w.serialize(step).expect("trace row serializes");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("csv is utf8")
    }

    pub fn from_csv_str(profile_id: &str, episode: u32, data: &str) -> Result<Self, ApsimError> {
        let mut r = csv::Reader::from_reader(data.as_bytes());
        let mut steps = Vec::new();
        for row in r.deserialize() {
            let step: TraceStep = row.map_err(|e| ApsimError::TraceCsv(e.to_string()))?;
            steps.push(step);
        }
        Ok(Trace {
            profile_id: profile_id.to_string(),
            episode,
            steps,
        })
    }
}

/// Runs one closed-loop episode. Determinism contract: identical
/// (profile, meals, fault, seed, stream) produce a bit-identical
/// trace.
pub fn run_episode(
    profile: &PatientProfile,
    horizon: u32,
    meals: &[Meal],
    fault: Option<&FaultSpec>,
    seed: u64,
    stream: u64,
    cfg: &LoopConfig,
) -> Result<Trace, ApsimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    run_episode_rng(profile, horizon, meals, fault, &mut rng, cfg)
}

/// Same as `run_episode` but consuming an existing RNG (the corpus
/// generator draws meal schedules from the same stream first).
pub fn run_episode_rng(
    profile: &PatientProfile,
    horizon: u32,
    meals: &[Meal],
    fault: Option<&FaultSpec>,
    rng: &mut ChaCha8Rng,
    cfg: &LoopConfig,
) -> Result<Trace, ApsimError> {
    if horizon == 0 {
        return Err(ApsimError::EmptyHorizon);
    }
    profile.validate()?;
    let noise = Normal::new(0.0, cfg.sensor_noise_sd).expect("valid noise sd");
    let mut state = SimState::equilibrium(profile);
    let mut frozen: Option<f64> = None;
    let mut steps = Vec::with_capacity(horizon as usize);
    for t in 0..horizon {
        let meal = meals
            .iter()
            .filter(|m| m.step == t)
            .map(|m| m.grams)
            .sum::<f64>();
        let sensed_raw = (state.bg + noise.sample(rng)).max(1.0);
        let sensed = match fault {
            Some(f) => {
                if f.kind == FaultKind::SensorFreeze && f.active_at(t) && frozen.is_none() {
                    frozen = Some(sensed_raw);
                }
                f.apply_to_sensor(t, sensed_raw, frozen)
            }
            None => sensed_raw,
        };
        let commanded = controller_step(sensed, state.iob, meal, profile, cfg.bgt);
        let issued = match fault {
            Some(f) => f.apply_to_command(t, commanded),
            None => commanded,
        };
        steps.push(TraceStep {
            t,
            bg_true: state.bg,
            bg_sensed: sensed,
            iob: state.iob,
            insulin_rate: issued.insulin_rate,
            bolus: issued.bolus,
            carbs: meal,
            fault_active: fault.map_or(false, |f| f.active_at(t)),
            hazard: hazard_label(state.bg, cfg),
        });
        state = step_patient(&state, profile, &issued, meal)?;
    }
    Ok(Trace {
        profile_id: profile.id.clone(),
        episode: 0,
        steps,
    })
}
