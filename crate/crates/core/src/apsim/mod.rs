//! Deterministic closed-loop artificial pancreas simulation: patient
//! dynamics, basal-bolus controller, fault injection, hazard
//! labeling, and corpus generation.

pub mod controller;
pub mod corpus;
pub mod episode;
pub mod fault;
pub mod patient;

pub use controller::controller_step;
pub use corpus::{default_fault_mix, generate_corpus, CorpusConfig, CorpusMeta, FaultMixEntry};
pub use episode::{
    hazard_label, run_episode, run_episode_rng, LoopConfig, Meal, Trace, TraceStep, HAZARD_H1,
    HAZARD_H2, HAZARD_NONE,
};
pub use fault::{FaultKind, FaultSpec};
pub use patient::{
    default_profiles, step_patient, ControlCommand, DynamicsParams, PatientProfile, SimState,
    DT_MIN,
};

/// An episode produced by the simulator; alias used in re-exports.
pub type Episode = Trace;

#[derive(Debug, thiserror::Error)]
pub enum ApsimError {
    #[error("invalid profile {id}: {reason}")]
    InvalidProfile { id: String, reason: String },
    #[error("patient dynamics diverged at step {step}")]
    Divergence { step: u32 },
    #[error("horizon must be at least 1 step")]
    EmptyHorizon,
    #[error("corpus requires at least one profile")]
    NoProfiles,
    #[error("fault mix fractions sum to {sum}, expected 1")]
    FaultMixFractions { sum: f64 },
    #[error("trace csv: {0}")]
    TraceCsv(String),
}
