//! Experiment configuration: a strict JSON schema (unknown keys are
//! errors, reported with field paths) that pins every seed and knob a
//! run depends on, so a config file fully determines its artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use robustmon_core::apsim::{default_profiles, CorpusConfig, LoopConfig};
use robustmon_core::monitors::{FeatureSpec, MonitorKind, TrainSettings};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory for all artifacts; `--out` overrides it.
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub features: FeatureSection,
    pub labels: LabelSection,
    pub training: TrainingSection,
    pub attack: AttackSection,
    pub evaluation: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    /// How many of the built-in patient profiles to simulate.
    pub profiles: usize,
    pub episodes_per_profile: u32,
    /// Steps per episode (5-minute control cycles).
    pub horizon: u32,
    /// Root seed for simulation; `--seed` overrides it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    pub window_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    /// Label lookahead T: a window is unsafe iff a hazard occurs
    /// within T steps after its anchor.
    pub horizon: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// One baseline (w = 0) and one custom (w = semantic_weight)
    /// monitor per architecture is trained for each seed.
    pub seeds: Vec<u64>,
    /// Semantic-loss weight of the custom monitors.
    pub semantic_weight: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Train on every n-th training window.
    pub train_stride: usize,
    pub mlp_epochs: u32,
    pub lstm_epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    /// Gaussian noise scales, in training-split standard deviations.
    pub gaussian_sigmas: Vec<f64>,
    /// Base seed; sweep entry i draws with gaussian_seed + i.
    pub gaussian_seed: u64,
    /// White-box FGSM budgets in normalized units.
    pub fgsm_epsilons: Vec<f64>,
    pub blackbox: BlackboxSection,
    /// Attack and evaluate every n-th test window.
    pub test_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackboxSection {
    pub epsilon: f64,
    /// Upper bound on target queries for substitute training.
    pub query_budget: usize,
    /// Query every n-th train/val window when fitting the substitute.
    pub query_stride: usize,
    pub substitute_epochs: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Tolerance window delta, in steps.
    pub delta: usize,
}

impl ExperimentConfig {
    /// Reads and validates a config file. Schema violations name the
    /// offending field path.
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let body = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            message: format!("{}: {e}", path.display()),
        })?;
        let mut de = serde_json::Deserializer::from_str(&body);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Config {
                message: format!("{}: {} (at {})", path.display(), e.inner(), e.path()),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |field: &str, reason: String| {
            Err(CliError::Config { message: format!("{field}: {reason}") })
        };
        let max_profiles = default_profiles().len();
        if self.corpus.profiles == 0 || self.corpus.profiles > max_profiles {
            return fail(
                "corpus.profiles",
                format!("must be 1..={max_profiles} (built-in profiles), got {}", self.corpus.profiles),
            );
        }
        if self.corpus.episodes_per_profile == 0 {
            return fail("corpus.episodes_per_profile", "must be positive".into());
        }
        if self.features.window_len < 2 {
            return fail("features.window_len", "needs at least 2 steps for slopes".into());
        }
        let need = self.features.window_len as u32 + self.labels.horizon;
        if self.corpus.horizon < need {
            return fail(
                "corpus.horizon",
                format!("must cover window_len + labels.horizon = {need} steps, got {}", self.corpus.horizon),
            );
        }
        if self.labels.horizon == 0 {
            return fail("labels.horizon", "must be positive".into());
        }
        if self.training.seeds.is_empty() {
            return fail("training.seeds", "must list at least one seed".into());
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.training.seeds {
            if !seen.insert(*s) {
                return fail("training.seeds", format!("seed {s} listed twice"));
            }
        }
        if !(self.training.semantic_weight.is_finite() && self.training.semantic_weight > 0.0) {
            return fail(
                "training.semantic_weight",
                format!("must be finite and positive, got {}", self.training.semantic_weight),
            );
        }
        if self.training.batch_size == 0 || self.training.train_stride == 0 {
            return fail("training", "batch_size and train_stride must be positive".into());
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate > 0.0) {
            return fail("training.learning_rate", "must be finite and positive".into());
        }
        if self.training.mlp_epochs == 0 || self.training.lstm_epochs == 0 {
            return fail("training", "mlp_epochs and lstm_epochs must be positive".into());
        }
        if self.attack.gaussian_sigmas.is_empty() {
            return fail("attack.gaussian_sigmas", "must list at least one scale".into());
        }
        for s in &self.attack.gaussian_sigmas {
            if !(s.is_finite() && *s > 0.0) {
                return fail("attack.gaussian_sigmas", format!("scale {s} must be finite and positive"));
            }
        }
        if self.attack.fgsm_epsilons.is_empty() {
            return fail("attack.fgsm_epsilons", "must list at least one budget".into());
        }
        for e in &self.attack.fgsm_epsilons {
            if !(e.is_finite() && *e > 0.0) {
                return fail("attack.fgsm_epsilons", format!("budget {e} must be finite and positive"));
            }
        }
        if !(self.attack.blackbox.epsilon.is_finite() && self.attack.blackbox.epsilon > 0.0) {
            return fail("attack.blackbox.epsilon", "must be finite and positive".into());
        }
        if self.attack.blackbox.query_budget == 0
            || self.attack.blackbox.query_stride == 0
            || self.attack.blackbox.substitute_epochs == 0
        {
            return fail(
                "attack.blackbox",
                "query_budget, query_stride, and substitute_epochs must be positive".into(),
            );
        }
        if self.attack.test_stride == 0 {
            return fail("attack.test_stride", "must be positive".into());
        }
        Ok(())
    }

    pub fn feature_spec(&self) -> FeatureSpec {
        FeatureSpec { window_len: self.features.window_len, ..FeatureSpec::default() }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig::default()
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let profiles = default_profiles().into_iter().take(self.corpus.profiles).collect();
        CorpusConfig {
            profiles,
            episodes_per_profile: self.corpus.episodes_per_profile,
            horizon: self.corpus.horizon,
            seed: self.corpus.seed,
            fault_mix: robustmon_core::apsim::default_fault_mix(),
            loop_config: self.loop_config(),
        }
    }

    /// Every monitor this config trains, in fixed order: architecture,
    /// then baseline before custom, then seeds in listed order.
    pub fn model_plans(&self) -> Vec<ModelPlan> {
        let mut plans = Vec::new();
        for kind in [MonitorKind::Mlp, MonitorKind::Lstm] {
            for (group, weight) in [("baseline", 0.0), ("custom", self.training.semantic_weight)] {
                for &seed in &self.training.seeds {
                    plans.push(ModelPlan {
                        name: format!("{}_{group}_s{seed}", kind_slug(kind)),
                        kind,
                        semantic_weight: weight,
                        seed,
                    });
                }
            }
        }
        plans
    }
}

pub fn kind_slug(kind: MonitorKind) -> &'static str {
    match kind {
        MonitorKind::Mlp => "mlp",
        MonitorKind::Lstm => "lstm",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPlan {
    pub name: String,
    pub kind: MonitorKind,
    pub semantic_weight: f64,
    pub seed: u64,
}

impl ModelPlan {
    pub fn is_baseline(&self) -> bool {
        self.semantic_weight == 0.0
    }

    pub fn settings(&self, cfg: &ExperimentConfig) -> TrainSettings {
        let mut s = TrainSettings::new(self.kind, self.semantic_weight, self.seed);
        s.epochs = match self.kind {
            MonitorKind::Mlp => cfg.training.mlp_epochs,
            MonitorKind::Lstm => cfg.training.lstm_epochs,
        };
        s.batch_size = cfg.training.batch_size;
        s.learning_rate = cfg.training.learning_rate;
        s.train_stride = cfg.training.train_stride;
        s
    }
}
