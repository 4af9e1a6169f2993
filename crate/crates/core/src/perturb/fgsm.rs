//! White-box fast gradient sign attack: one signed step of size
//! epsilon per dimension, maximizing the plain cross-entropy against
//! the true label under the max-norm budget.

use serde::{Deserialize, Serialize};

use crate::monitors::{
    ChannelStats, FeatureSpec, Monitor, WindowSample, ACTION_BLOCK, CHANNEL_NAMES, NUM_CHANNELS,
};
use crate::neural::{weighted_ce_with_semantics, Network};

use super::{channel_mask, PerturbError};

/// One-step attack budget. `epsilon` is per-dimension in normalized
/// feature units; the delta is `epsilon * sign(input gradient)` with
/// `sign(0) = 0`, applied to the target channels. The attack always
/// uses the sample's true label (untargeted) and the unweighted
/// cross-entropy, independent of how the monitor was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgsmSpec {
    pub epsilon: f64,
    /// Channel names; defaults to every channel, sensors and commands.
    pub target_channels: Vec<String>,
}

impl FgsmSpec {
    pub fn new(epsilon: f64) -> Self {
        FgsmSpec {
            epsilon,
            target_channels: CHANNEL_NAMES.iter().map(|c| c.to_string()).collect(),
        }
    }
}

pub(crate) fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Attacks a batch and returns the perturbed copy plus the raw signed
/// delta per sample. The perturbed features are `clean + delta` on the
/// continuous channels; the one-hot action block is additionally
/// snapped back to a simplex vertex (see `snap_action_block`), so on
/// that block the stored features can differ from `clean + delta`.
///
/// Rule-based monitors expose no input gradient and are rejected.
pub fn fgsm_whitebox(
    monitor: &Monitor,
    samples: &[WindowSample],
    spec: &FgsmSpec,
) -> Result<(Vec<WindowSample>, Vec<Vec<f64>>), PerturbError> {
    match monitor {
        Monitor::Rule(_) => Err(PerturbError::GradientFree { monitor: monitor.name().to_string() }),
        Monitor::Neural(m) => fgsm_on_network(&m.network, &m.feature, &m.stats, samples, spec),
    }
}

pub(crate) fn fgsm_on_network(
    network: &Network,
    feature: &FeatureSpec,
    stats: &ChannelStats,
    samples: &[WindowSample],
    spec: &FgsmSpec,
) -> Result<(Vec<WindowSample>, Vec<Vec<f64>>), PerturbError> {
    if !(spec.epsilon > 0.0) {
        return Err(PerturbError::BadSpec {
            reason: format!("epsilon must be positive, got {}", spec.epsilon),
        });
    }
    let mask = channel_mask(&spec.target_channels)?;
    // Snapping rewrites all four action coordinates, so it only runs
    // when the whole block is under attack; a partial mask must leave
    // its untargeted coordinates bit-identical.
    let snap = ACTION_BLOCK.clone().all(|c| mask[c]);
    let width = feature.flat_width();
    let mut perturbed = Vec::with_capacity(samples.len());
    let mut deltas = Vec::with_capacity(samples.len());
    let mut grads = network.zero_grad();
    for chunk in samples.chunks(256) {
        let x = crate::monitors::model::features_tensor(feature, chunk)?;
        let labels: Vec<u8> = chunk.iter().map(|s| s.label).collect();
        let cache = network.forward_batch(&x).map_err(crate::monitors::MonitorError::from)?;
        let out = weighted_ce_with_semantics(cache.logits(), &labels, [1.0, 1.0], None);
        grads.zero();
        let d_input = network
            .backward(&cache, &out.d_logits, &mut grads, true)
            .expect("input gradient was requested");
        for (r, s) in chunk.iter().enumerate() {
            let g = d_input.row(r);
            let mut delta = vec![0.0; width];
            let mut features = s.features.clone();
            for i in 0..width {
                if mask[i % NUM_CHANNELS] {
                    delta[i] = spec.epsilon * signum0(g[i]);
                    features[i] += delta[i];
                }
            }
            if snap {
                snap_action_block(&mut features, &s.features, stats, feature.window_len);
            }
            perturbed.push(WindowSample { features, ..s.clone() });
            deltas.push(delta);
        }
    }
    Ok((perturbed, deltas))
}

/// The stepped action coordinates no longer form a one-hot vector, so
/// each window step is re-projected to the simplex vertex nearest in
/// L2, measured in raw (denormalized) units; exact ties keep the
/// original action. When the winner is the original vertex the clean
/// coordinates are copied back, keeping the block bit-identical.
fn snap_action_block(features: &mut [f64], clean: &[f64], stats: &ChannelStats, window_len: usize) {
    let block = ACTION_BLOCK.len();
    for step in 0..window_len {
        let base = step * NUM_CHANNELS + ACTION_BLOCK.start;
        let mut raw = [0.0_f64; 4];
        let mut orig = 0usize;
        let mut orig_raw = f64::NEG_INFINITY;
        for j in 0..block {
            let ch = ACTION_BLOCK.start + j;
            raw[j] = features[base + j] * stats.std[ch] + stats.mean[ch];
            let clean_raw = clean[base + j] * stats.std[ch] + stats.mean[ch];
            if clean_raw > orig_raw {
                orig_raw = clean_raw;
                orig = j;
            }
        }
        let mut d2 = [0.0_f64; 4];
        for (k, d) in d2.iter_mut().enumerate() {
            for (j, r) in raw.iter().enumerate() {
                let v = r - (j == k) as u8 as f64;
                *d += v * v;
            }
        }
        let mut best = 0usize;
        for k in 1..block {
            if d2[k] < d2[best] {
                best = k;
            }
        }
        if d2[orig] == d2[best] {
            best = orig;
        }
        if best == orig {
            features[base..base + block].copy_from_slice(&clean[base..base + block]);
        } else {
            for j in 0..block {
                let ch = ACTION_BLOCK.start + j;
                features[base + j] = ((j == best) as u8 as f64 - stats.mean[ch]) / stats.std[ch];
            }
        }
    }
}
