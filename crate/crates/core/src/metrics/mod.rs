//! Monitor scoring: tolerance-window confusion counts over trace
//! series, precision/recall/accuracy/F1, robustness error under
//! perturbation, and report emission for heat-map plotting.

pub mod report;
pub mod robustness;
pub mod scores;
pub mod tolerance;

use thiserror::Error;

use crate::monitors::MonitorError;

pub use report::emit_report;
pub use robustness::{
    clean_eval, flip_counts, robustness_report, robustness_report_from, tolerance_block, CleanEval,
    FlipCounts, PerturbationTag, RobustnessReport,
};
pub use scores::{prf_scores, ConfusionCounts, ScoredBlock, Scores};
pub use tolerance::{hazard_series, prediction_series, tolerance_confusion, ToleranceParams};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch in {what}: {left} vs {right}")]
    LengthMismatch { what: String, left: usize, right: usize },
    #[error("batches misaligned at sample {index}: {reason}")]
    Misaligned { index: usize, reason: String },
    #[error("sample references unknown trace {trace_id:?}")]
    UnknownTrace { trace_id: String },
    #[error("nothing to score: empty batch")]
    EmptyBatch,
    #[error("nothing to emit: empty report list")]
    EmptyReports,
    #[error("matrix cell missing: model {model:?}, kind {kind:?}, magnitude {magnitude}")]
    MissingCell { model: String, kind: String, magnitude: f64 },
    #[error("duplicate report: model {model:?}, kind {kind:?}, magnitude {magnitude}")]
    DuplicateCell { model: String, kind: String, magnitude: f64 },
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("io error on {path}")]
    Io { path: String, source: std::io::Error },
}
