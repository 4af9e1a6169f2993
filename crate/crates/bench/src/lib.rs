//! Shared fixtures for the criterion benches: a small deterministic
//! corpus, a dataset built from it, and briefly trained monitors of
//! both architectures.

use robustmon_core::apsim::{default_fault_mix, generate_corpus, CorpusConfig, LoopConfig, Trace};
use robustmon_core::monitors::{
    build_dataset, train_monitor, Dataset, FeatureSpec, MonitorKind, MonitorModel, TrainSettings,
};
use robustmon_core::rules::{RuleEngine, RuleTable};

pub const BGT: f64 = 120.0;

/// Two profiles, six episodes each, a quarter-day horizon: enough
/// steps for every bench to exercise realistic batch shapes.
pub fn bench_corpus() -> Vec<Trace> {
    let profiles = robustmon_core::apsim::default_profiles().into_iter().take(2).collect();
    let cfg = CorpusConfig {
        profiles,
        episodes_per_profile: 6,
        horizon: 72,
        seed: 7,
        fault_mix: default_fault_mix(),
        loop_config: LoopConfig::default(),
    };
    let (traces, _) = generate_corpus(&cfg).expect("bench corpus generates");
    traces
}

pub fn bench_dataset(traces: &[Trace]) -> Dataset {
    let engine = RuleEngine::new(RuleTable::default_table());
    let spec = FeatureSpec::default();
    build_dataset(traces, &spec, 6, &engine, BGT).expect("bench dataset builds")
}

/// One epoch is enough: benches measure per-step cost, not quality.
pub fn bench_monitor(dataset: &Dataset, kind: MonitorKind) -> MonitorModel {
    let mut settings = TrainSettings::new(kind, 0.0, 1);
    settings.epochs = 1;
    settings.batch_size = 32;
    settings.train_stride = 4;
    let (model, _) = train_monitor(dataset, &settings, "bench").expect("bench monitor trains");
    model
}
