//! Trained monitors, their verdicts, and checkpoint persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::neural::{softmax_rows, Architecture, Network, Tensor2, UNSAFE};
use crate::rules::{RuleEngine, RuleTable, WindowView};

use super::dataset::WindowSample;
use super::features::{split_signals, ChannelStats, FeatureSpec, NUM_CHANNELS};
use super::MonitorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorKind {
    Mlp,
    Lstm,
}

impl MonitorKind {
    /// Hidden layer widths fixed per architecture family.
    pub fn hidden(&self) -> Vec<usize> {
        match self {
            MonitorKind::Mlp => vec![256, 128],
            MonitorKind::Lstm => vec![128, 64],
        }
    }

    pub fn architecture(&self, spec: &FeatureSpec) -> Architecture {
        match self {
            MonitorKind::Mlp => Architecture::Mlp {
                channels: NUM_CHANNELS,
                window: spec.window_len,
                hidden: self.hidden(),
            },
            MonitorKind::Lstm => Architecture::Lstm {
                channels: NUM_CHANNELS,
                window: spec.window_len,
                hidden: self.hidden(),
            },
        }
    }
}

/// Training configuration persisted in every checkpoint. A baseline
/// monitor is simply `semantic_weight = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub kind: MonitorKind,
    pub semantic_weight: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train on every `train_stride`-th training sample (1 = all).
    pub train_stride: usize,
    pub seed: u64,
}

impl TrainSettings {
    pub fn new(kind: MonitorKind, semantic_weight: f64, seed: u64) -> Self {
        TrainSettings {
            kind,
            semantic_weight,
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.001,
            train_stride: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), MonitorError> {
        if !(self.semantic_weight.is_finite() && self.semantic_weight >= 0.0) {
            return Err(MonitorError::BadTrainSettings {
                reason: format!("semantic_weight {} must be finite and non-negative", self.semantic_weight),
            });
        }
        if self.epochs == 0 || self.batch_size == 0 || self.train_stride == 0 {
            return Err(MonitorError::BadTrainSettings {
                reason: "epochs, batch_size, and train_stride must be positive".into(),
            });
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(MonitorError::BadTrainSettings {
                reason: format!("learning_rate {} must be finite and positive", self.learning_rate),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorVerdict {
    pub p_unsafe: f64,
}

impl MonitorVerdict {
    /// Ties at the threshold predict unsafe: the monitor fails safe.
    pub fn predicted_unsafe(&self) -> bool {
        self.p_unsafe >= 0.5
    }
}

/// A trained neural monitor. Carries the normalization its inputs are
/// expected in, so mismatched datasets are detectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub name: String,
    pub settings: TrainSettings,
    pub feature: FeatureSpec,
    pub stats: ChannelStats,
    pub class_weights: [f64; 2],
    pub network: Network,
}

impl MonitorModel {
    pub fn check_sample_width(&self, width: usize) -> Result<(), MonitorError> {
        let expect = self.feature.flat_width();
        if width != expect {
            return Err(MonitorError::ShapeMismatch { expected: expect, got: width });
        }
        Ok(())
    }

    /// Verifies a dataset was normalized with this model's statistics.
    pub fn check_stats(&self, stats: &ChannelStats) -> Result<(), MonitorError> {
        if *stats != self.stats {
            return Err(MonitorError::NormalizationMismatch { model: self.name.clone() });
        }
        Ok(())
    }

    pub fn predict_batch(&self, samples: &[WindowSample]) -> Result<Vec<MonitorVerdict>, MonitorError> {
        let mut out = Vec::with_capacity(samples.len());
        // Bounded chunks keep the activation workspaces cache-sized.
        for chunk in samples.chunks(256.max(1)) {
            let batch = features_tensor(&self.feature, chunk)?;
            self.check_sample_width(batch.cols())?;
            let cache = self.network.forward_batch(&batch)?;
            let probs = softmax_rows(cache.logits());
            for r in 0..probs.rows() {
                out.push(MonitorVerdict { p_unsafe: probs.row(r)[UNSAFE] });
            }
        }
        Ok(out)
    }
}

pub(crate) fn features_tensor(spec: &FeatureSpec, samples: &[WindowSample]) -> Result<Tensor2, MonitorError> {
    let width = spec.flat_width();
    let mut batch = Tensor2::zeros(samples.len(), width);
    for (r, s) in samples.iter().enumerate() {
        if s.features.len() != width {
            return Err(MonitorError::ShapeMismatch { expected: width, got: s.features.len() });
        }
        batch.row_mut(r).copy_from_slice(&s.features);
    }
    Ok(batch)
}

/// The rule table acting as a monitor: denormalizes each window back
/// to engineering units and evaluates the guards. Its verdict is hard,
/// so `p_unsafe` is exactly 0 or 1.
#[derive(Debug, Clone)]
pub struct RuleMonitor {
    pub name: String,
    pub engine: RuleEngine,
    pub feature: FeatureSpec,
    pub stats: ChannelStats,
    pub bgt: f64,
}

impl RuleMonitor {
    pub fn new(feature: FeatureSpec, stats: ChannelStats, bgt: f64) -> Self {
        RuleMonitor {
            name: "rule".into(),
            engine: RuleEngine::new(RuleTable::default_table()),
            feature,
            stats,
            bgt,
        }
    }

    pub fn predict_batch(&self, samples: &[WindowSample]) -> Result<Vec<MonitorVerdict>, MonitorError> {
        let width = self.feature.flat_width();
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            if s.features.len() != width {
                return Err(MonitorError::ShapeMismatch { expected: width, got: s.features.len() });
            }
            let mut raw = s.features.clone();
            self.stats.denormalize_row(&mut raw);
            let (bg, iob, rate) = split_signals(&raw, self.feature.window_len);
            let (_, p) = self
                .engine
                .monitor_window(WindowView { bg: &bg, iob: &iob, rate: &rate }, self.bgt)
                .map_err(MonitorError::Rules)?;
            out.push(MonitorVerdict { p_unsafe: p });
        }
        Ok(out)
    }
}

/// Any monitor the bench can score.
#[derive(Debug, Clone)]
pub enum Monitor {
    Neural(MonitorModel),
    Rule(RuleMonitor),
}

impl Monitor {
    pub fn name(&self) -> &str {
        match self {
            Monitor::Neural(m) => &m.name,
            Monitor::Rule(m) => &m.name,
        }
    }

    pub fn predict_batch(&self, samples: &[WindowSample]) -> Result<Vec<MonitorVerdict>, MonitorError> {
        match self {
            Monitor::Neural(m) => m.predict_batch(samples),
            Monitor::Rule(m) => m.predict_batch(samples),
        }
    }
}

/// Versioned checkpoint wrapper; the JSON round-trips parameters
/// bit-exactly (shortest-round-trip decimal text).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: MonitorModel,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &MonitorModel, path: &Path) -> Result<(), MonitorError> {
    let cp = Checkpoint { format_version: CHECKPOINT_VERSION, model: model.clone() };
    let body = serde_json::to_string_pretty(&cp).expect("checkpoint serializes");
    std::fs::write(path, body).map_err(|e| MonitorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<MonitorModel, MonitorError> {
    let body = std::fs::read_to_string(path).map_err(|e| MonitorError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let cp: Checkpoint = serde_json::from_str(&body).map_err(|e| MonitorError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    if cp.format_version != CHECKPOINT_VERSION {
        return Err(MonitorError::Format {
            path: path.display().to_string(),
            reason: format!("unsupported checkpoint version {}", cp.format_version),
        });
    }
    Ok(cp.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Architecture;

    fn toy_model(kind: MonitorKind) -> MonitorModel {
        let feature = FeatureSpec::default();
        let arch = match kind {
            MonitorKind::Mlp => Architecture::Mlp { channels: NUM_CHANNELS, window: 6, hidden: vec![8, 4] },
            MonitorKind::Lstm => Architecture::Lstm { channels: NUM_CHANNELS, window: 6, hidden: vec![6, 4] },
        };
        MonitorModel {
            name: "toy".into(),
            settings: TrainSettings::new(kind, 0.0, 9),
            feature,
            stats: ChannelStats::identity(NUM_CHANNELS),
            class_weights: [1.0, 1.0],
            network: Network::new(arch, 9),
        }
    }

    fn sample(features: Vec<f64>) -> WindowSample {
        WindowSample { trace_id: "x".into(), t: 5, label: 0, indicator: 0, features }
    }

    #[test]
    fn verdict_threshold_sweep() {
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let v = MonitorVerdict { p_unsafe: p };
            assert_eq!(v.predicted_unsafe(), p >= 0.5);
        }
        assert!(MonitorVerdict { p_unsafe: 0.5 }.predicted_unsafe(), "tie goes unsafe");
    }

    #[test]
    fn neural_predictions_are_probabilities() {
        let m = toy_model(MonitorKind::Lstm);
        let samples: Vec<WindowSample> = (0..7)
            .map(|i| sample((0..54).map(|j| ((i * 31 + j * 7) % 11) as f64 / 10.0 - 0.5).collect()))
            .collect();
        let verdicts = m.predict_batch(&samples).unwrap();
        assert_eq!(verdicts.len(), 7);
        for v in verdicts {
            assert!(v.p_unsafe >= 0.0 && v.p_unsafe <= 1.0);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = toy_model(MonitorKind::Mlp);
        let err = m.predict_batch(&[sample(vec![0.0; 10])]);
        assert!(matches!(err, Err(MonitorError::ShapeMismatch { expected: 54, got: 10 })));
    }

    #[test]
    fn rule_monitor_outputs_hard_verdicts() {
        let feature = FeatureSpec::default();
        let stats = ChannelStats::identity(NUM_CHANNELS);
        let rm = RuleMonitor::new(feature.clone(), stats, 120.0);
        // A window sitting quietly at 110 mg/dL, basal rate.
        let mut quiet = Vec::new();
        for _ in 0..6 {
            quiet.extend_from_slice(&[110.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        // Low and falling BG while insulin keeps flowing.
        let mut risky = Vec::new();
        for s in 0..6 {
            let bg = 90.0 - 5.0 * s as f64;
            risky.extend_from_slice(&[bg, 1.2, -5.0, 0.01, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        let verdicts = rm
            .predict_batch(&[sample(quiet), sample(risky)])
            .unwrap();
        assert_eq!(verdicts[0].p_unsafe, 0.0);
        assert_eq!(verdicts[1].p_unsafe, 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = toy_model(MonitorKind::Lstm);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(m, back);
        let flat_a = m.network.params_flat();
        let flat_b = back.network.params_flat();
        assert_eq!(flat_a.len(), flat_b.len());
        for (a, b) in flat_a.iter().zip(&flat_b) {
            assert_eq!(a.to_bits(), b.to_bits(), "parameter bits survive the round trip");
        }
        // Re-serialization is byte-stable.
        save_checkpoint(&back, &dir.path().join("model2.json")).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(dir.path().join("model2.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stats_mismatch_is_detected() {
        let m = toy_model(MonitorKind::Mlp);
        let mut other = ChannelStats::identity(NUM_CHANNELS);
        other.mean[0] = 1.0;
        assert!(m.check_stats(&ChannelStats::identity(NUM_CHANNELS)).is_ok());
        assert!(matches!(
            m.check_stats(&other),
            Err(MonitorError::NormalizationMismatch { .. })
        ));
    }
}
