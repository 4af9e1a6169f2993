//! Pipeline orchestration for the robustmon testbench: strict JSON
//! configs, digest-cached stages, and acceptance snapshots, exposed
//! both as a library (for tests) and through the `robustmon` binary.

pub mod check;
pub mod config;
pub mod manifest;
pub mod stages;

pub use check::{acceptance_snapshot, AcceptanceSummary, CriterionResult};
pub use config::{ExperimentConfig, ModelPlan};
pub use manifest::{file_digest, sha256_hex, value_digest, RunManifest};
pub use stages::{
    cmd_attack, cmd_evaluate, cmd_reproduce, cmd_simulate, cmd_train, Ctx, StageOutcome,
};

/// Process exit codes: 0 success, 1 pipeline failure, 2 config error,
/// 3 upstream artifacts missing, 4 acceptance-check failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {message}")]
    Config { message: String },
    #[error("artifacts for stage `{stage}` are missing or stale; run `robustmon {stage}` first")]
    MissingUpstream { stage: String },
    #[error("acceptance check failed: {failed} of {total} criteria unsatisfied")]
    Acceptance { failed: usize, total: usize },
    #[error("{message}")]
    Pipeline { message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline { .. } => 1,
            CliError::Config { .. } => 2,
            CliError::MissingUpstream { .. } => 3,
            CliError::Acceptance { .. } => 4,
        }
    }
}

/// Wraps any core error as a pipeline failure (exit code 1).
pub(crate) fn pipeline(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline { message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_the_contract() {
        assert_eq!(CliError::Pipeline { message: "x".into() }.exit_code(), 1);
        assert_eq!(CliError::Config { message: "x".into() }.exit_code(), 2);
        assert_eq!(CliError::MissingUpstream { stage: "train".into() }.exit_code(), 3);
        assert_eq!(CliError::Acceptance { failed: 1, total: 6 }.exit_code(), 4);
    }

    #[test]
    fn missing_upstream_names_the_stage_to_run() {
        let msg = CliError::MissingUpstream { stage: "simulate".into() }.to_string();
        assert!(msg.contains("robustmon simulate"), "{msg}");
    }
}
