//! Accidental-fault model: zero-mean Gaussian noise on the sensor
//! channels, scaled in multiples of each channel's training standard
//! deviation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::monitors::{WindowSample, CHANNEL_NAMES, NUM_CHANNELS, SENSOR_CHANNELS};

use super::{channel_mask, PerturbError};

/// Zero-mean Gaussian noise of standard deviation
/// `sigma_scale * channel_std`, applied to the target channels only.
/// Features are stored normalized, so the draw is simply
/// `sigma_scale * N(0, 1)` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub sigma_scale: f64,
    /// Channel names; defaults to the four sensor-derived channels.
    /// Command channels are left untouched by default because the
    /// accidental-fault model covers sensing, not actuation.
    pub target_channels: Vec<String>,
    pub seed: u64,
}

impl GaussianSpec {
    pub fn new(sigma_scale: f64, seed: u64) -> Self {
        GaussianSpec {
            sigma_scale,
            target_channels: SENSOR_CHANNELS.iter().map(|&c| CHANNEL_NAMES[c].to_string()).collect(),
            seed,
        }
    }
}

/// Returns a noisy copy of the batch. Deterministic given the spec:
/// one ChaCha8 stream seeded from `spec.seed`, consumed in sample
/// order, step order, channel order, drawing only for target
/// coordinates. Non-target channels are bit-identical to the input.
pub fn gaussian_perturb(
    samples: &[WindowSample],
    spec: &GaussianSpec,
) -> Result<Vec<WindowSample>, PerturbError> {
    if !(spec.sigma_scale > 0.0) {
        return Err(PerturbError::BadSpec {
            reason: format!("sigma_scale must be positive, got {}", spec.sigma_scale),
        });
    }
    let mask = channel_mask(&spec.target_channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let mut features = s.features.clone();
        for (i, v) in features.iter_mut().enumerate() {
            if mask[i % NUM_CHANNELS] {
                let draw: f64 = rng.sample(StandardNormal);
                *v += spec.sigma_scale * draw;
            }
        }
        out.push(WindowSample { features, ..s.clone() });
    }
    Ok(out)
}
