//! Window feature extraction and per-channel normalization.

use serde::{Deserialize, Serialize};

use crate::apsim::Trace;
use crate::rules::{discretize, ControlAction, DEFAULT_RHO};

use super::MonitorError;

/// Channel order is part of the persisted format; every consumer
/// (models, perturbations, CSV) indexes into this layout.
pub const CHANNEL_NAMES: [&str; 9] = [
    "bg_sensed",
    "iob",
    "bg_slope",
    "iob_slope",
    "insulin_rate",
    "act_u1",
    "act_u2",
    "act_u3",
    "act_u4",
];

pub const NUM_CHANNELS: usize = CHANNEL_NAMES.len();

/// Channels carrying sensor-derived values; Gaussian noise is
/// restricted to these.
pub const SENSOR_CHANNELS: [usize; 4] = [0, 1, 2, 3];

/// Columns 5..9 hold the one-hot control action block.
pub const ACTION_BLOCK: std::ops::Range<usize> = 5..9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub window_len: usize,
    /// Relative dead-band for mapping pump rates to u1..u4.
    pub rate_deadband: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { window_len: 6, rate_deadband: DEFAULT_RHO }
    }
}

impl FeatureSpec {
    pub fn flat_width(&self) -> usize {
        self.window_len * NUM_CHANNELS
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.window_len < 2 {
            return Err(MonitorError::BadFeatureSpec {
                reason: format!("window_len {} is below 2", self.window_len),
            });
        }
        if !(self.rate_deadband.is_finite() && self.rate_deadband >= 0.0) {
            return Err(MonitorError::BadFeatureSpec {
                reason: format!("rate_deadband {} is not a finite non-negative value", self.rate_deadband),
            });
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation fitted on the training
/// split. Constant channels keep std = 1 so normalization is the
/// identity shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Population statistics over flattened windows; `width` columns
    /// cycle through the channel layout.
    pub fn fit(rows: &[Vec<f64>], channels: usize) -> Self {
        let mut sum = vec![0.0f64; channels];
        let mut sum_sq = vec![0.0f64; channels];
        let mut n = vec![0u64; channels];
        for row in rows {
            for (i, &v) in row.iter().enumerate() {
                let c = i % channels;
                sum[c] += v;
                sum_sq[c] += v * v;
                n[c] += 1;
            }
        }
        let mut mean = vec![0.0; channels];
        let mut std = vec![1.0; channels];
        for c in 0..channels {
            if n[c] == 0 {
                continue;
            }
            let m = sum[c] / n[c] as f64;
            let var = (sum_sq[c] / n[c] as f64 - m * m).max(0.0);
            mean[c] = m;
            let s = var.sqrt();
            std[c] = if s > 1e-12 { s } else { 1.0 };
        }
        ChannelStats { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize_row(&self, row: &mut [f64]) {
        let c = self.channels();
        for (i, v) in row.iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
    }

    pub fn denormalize_row(&self, row: &mut [f64]) {
        let c = self.channels();
        for (i, v) in row.iter_mut().enumerate() {
            let ch = i % c;
            *v = *v * self.std[ch] + self.mean[ch];
        }
    }
}

/// Raw (un-normalized) features for the window ending at step `t`:
/// one row of `window_len * NUM_CHANNELS` values, step-major. Slopes
/// are one-step differences (zero at the trace start); the action
/// block one-hot encodes the discretized pump command.
pub fn window_features(trace: &Trace, t: usize, spec: &FeatureSpec) -> Vec<f64> {
    let w = spec.window_len;
    assert!(t + 1 >= w && t < trace.steps.len(), "window out of range");
    let mut row = Vec::with_capacity(spec.flat_width());
    for s in (t + 1 - w)..=t {
        let cur = &trace.steps[s];
        let prev = &trace.steps[s.saturating_sub(1)];
        let bg_slope = if s == 0 { 0.0 } else { cur.bg_sensed - prev.bg_sensed };
        let iob_slope = if s == 0 { 0.0 } else { cur.iob - prev.iob };
        let action = discretize(cur.insulin_rate, prev.insulin_rate, spec.rate_deadband);
        row.push(cur.bg_sensed);
        row.push(cur.iob);
        row.push(bg_slope);
        row.push(iob_slope);
        row.push(cur.insulin_rate);
        for a in ControlAction::ALL {
            row.push(if a == action { 1.0 } else { 0.0 });
        }
    }
    row
}

/// Splits a flattened window row back into per-signal series for the
/// rule engine: (bg, iob, rate) in step order.
pub fn split_signals(row: &[f64], window_len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert_eq!(row.len(), window_len * NUM_CHANNELS);
    let mut bg = Vec::with_capacity(window_len);
    let mut iob = Vec::with_capacity(window_len);
    let mut rate = Vec::with_capacity(window_len);
    for s in 0..window_len {
        let base = s * NUM_CHANNELS;
        bg.push(row[base]);
        iob.push(row[base + 1]);
        rate.push(row[base + 4]);
    }
    (bg, iob, rate)
}
