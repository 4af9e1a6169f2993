//! Windowed safety-monitor datasets, training, and prediction.

pub mod dataset;
pub mod features;
pub mod model;
pub mod train;

pub use dataset::{build_dataset, ryu_like, Dataset, DatasetManifest, SplitId, WindowSample};
pub use features::{ChannelStats, FeatureSpec, ACTION_BLOCK, CHANNEL_NAMES, NUM_CHANNELS, SENSOR_CHANNELS};
pub use model::{
    load_checkpoint, save_checkpoint, Checkpoint, Monitor, MonitorKind, MonitorModel, MonitorVerdict,
    RuleMonitor, TrainSettings,
};
pub use train::{train_monitor, EpochRow};

use crate::neural::NeuralError;
use crate::rules::RuleError;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("invalid feature spec: {reason}")]
    BadFeatureSpec { reason: String },
    #[error("invalid training settings: {reason}")]
    BadTrainSettings { reason: String },
    #[error("no traces to build a dataset from")]
    EmptyCorpus,
    #[error("trace {trace_id} has {len} steps; windowing needs at least {need}")]
    TraceTooShort { trace_id: String, len: usize, need: usize },
    #[error("sample width mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("dataset was not normalized with model {model}'s statistics")]
    NormalizationMismatch { model: String },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}
