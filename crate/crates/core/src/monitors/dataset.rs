//! Labeled window datasets: sliding windows over traces, episode-level
//! splits, training-split normalization, and CSV persistence.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apsim::{Trace, HAZARD_NONE};
use crate::rules::{RuleEngine, WindowView};

use super::features::{window_features, ChannelStats, FeatureSpec, CHANNEL_NAMES, NUM_CHANNELS};
use super::MonitorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitId {
    Train,
    Val,
    Test,
}

impl SplitId {
    pub const ALL: [SplitId; 3] = [SplitId::Train, SplitId::Val, SplitId::Test];

    pub fn name(&self) -> &'static str {
        match self {
            SplitId::Train => "train",
            SplitId::Val => "val",
            SplitId::Test => "test",
        }
    }
}

/// One windowed sample. `features` are normalized with the dataset's
/// training statistics; `indicator` was evaluated by the rule engine
/// on the un-normalized window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub trace_id: String,
    /// Anchor step: the window covers `[t - window_len + 1, t]`.
    pub t: u32,
    pub label: u8,
    pub indicator: u8,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: FeatureSpec,
    /// Label lookahead: label 1 iff a hazard occurs in `(t, t + horizon]`.
    pub horizon: u32,
    pub stats: ChannelStats,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl Dataset {
    pub fn split(&self, id: SplitId) -> &[WindowSample] {
        match id {
            SplitId::Train => &self.train,
            SplitId::Val => &self.val,
            SplitId::Test => &self.test,
        }
    }

    pub fn unsafe_count(&self, id: SplitId) -> usize {
        self.split(id).iter().filter(|s| s.label == 1).count()
    }

    /// Inverse-frequency class weights from the training split,
    /// normalized so the two weights average to 1.
    pub fn class_weights(&self) -> [f64; 2] {
        let n = self.train.len() as f64;
        let pos = self.unsafe_count(SplitId::Train) as f64;
        let neg = n - pos;
        if pos == 0.0 || neg == 0.0 {
            return [1.0, 1.0];
        }
        [n / (2.0 * neg), n / (2.0 * pos)]
    }
}

/// Deterministic episode-level split: positions 0..2 of every block of
/// five traces train, position 3 validates, position 4 tests.
fn split_of(trace_index: usize) -> SplitId {
    match trace_index % 5 {
        3 => SplitId::Val,
        4 => SplitId::Test,
        _ => SplitId::Train,
    }
}

/// Builds the windowed dataset from a corpus. Windows slide over each
/// trace; the label looks `horizon` steps ahead for a hazard; the
/// indicator comes from the rule engine on the same (un-normalized)
/// window. Splits partition whole traces, normalization is fitted on
/// the training split only.
pub fn build_dataset(
    traces: &[Trace],
    spec: &FeatureSpec,
    horizon: u32,
    engine: &RuleEngine,
    bgt: f64,
) -> Result<Dataset, MonitorError> {
    spec.validate()?;
    if traces.is_empty() {
        return Err(MonitorError::EmptyCorpus);
    }
    let need = spec.window_len + horizon as usize;
    for tr in traces {
        if tr.steps.len() < need {
            return Err(MonitorError::TraceTooShort {
                trace_id: tr.trace_id(),
                len: tr.steps.len(),
                need,
            });
        }
    }

    // Raw rows first; normalization statistics depend on the split.
    let per_trace: Vec<Vec<(u32, u8, u8, Vec<f64>)>> = traces
        .par_iter()
        .map(|tr| {
            let w = spec.window_len;
            let last_anchor = tr.steps.len() - 1 - horizon as usize;
            let mut rows = Vec::with_capacity(last_anchor + 2 - w);
            for t in (w - 1)..=last_anchor {
                let feats = window_features(tr, t, spec);
                let label = tr.steps[t + 1..=t + horizon as usize]
                    .iter()
                    .any(|s| s.hazard != HAZARD_NONE) as u8;
                let lo = t + 1 - w;
                let bg: Vec<f64> = tr.steps[lo..=t].iter().map(|s| s.bg_sensed).collect();
                let iob: Vec<f64> = tr.steps[lo..=t].iter().map(|s| s.iob).collect();
                let rate: Vec<f64> = tr.steps[lo..=t].iter().map(|s| s.insulin_rate).collect();
                let (_, p_unsafe) = engine
                    .monitor_window(WindowView { bg: &bg, iob: &iob, rate: &rate }, bgt)
                    .expect("window length checked above");
                rows.push((t as u32, label, (p_unsafe >= 0.5) as u8, feats));
            }
            rows
        })
        .collect();

    let mut raw_train: Vec<Vec<f64>> = Vec::new();
    for (i, rows) in per_trace.iter().enumerate() {
        if split_of(i) == SplitId::Train {
            for (_, _, _, feats) in rows {
                raw_train.push(feats.clone());
            }
        }
    }
    let stats = ChannelStats::fit(&raw_train, NUM_CHANNELS);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, rows) in per_trace.into_iter().enumerate() {
        let dst = match split_of(i) {
            SplitId::Train => &mut train,
            SplitId::Val => &mut val,
            SplitId::Test => &mut test,
        };
        let trace_id = traces[i].trace_id();
        for (t, label, indicator, mut feats) in rows {
            stats.normalize_row(&mut feats);
            dst.push(WindowSample { trace_id: trace_id.clone(), t, label, indicator, features: feats });
        }
    }

    Ok(Dataset { spec: spec.clone(), horizon, stats, train, val, test })
}

/// Summary persisted beside the split CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub window_len: usize,
    pub rate_deadband: f64,
    pub horizon: u32,
    pub channels: Vec<String>,
    pub stats: ChannelStats,
    pub counts: Vec<SplitCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCount {
    pub split: SplitId,
    pub samples: usize,
    pub unsafe_samples: usize,
}

impl Dataset {
    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            window_len: self.spec.window_len,
            rate_deadband: self.spec.rate_deadband,
            horizon: self.horizon,
            channels: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
            stats: self.stats.clone(),
            counts: SplitId::ALL
                .iter()
                .map(|&id| SplitCount {
                    split: id,
                    samples: self.split(id).len(),
                    unsafe_samples: self.unsafe_count(id),
                })
                .collect(),
        }
    }

    pub fn split_csv_header(spec: &FeatureSpec) -> String {
        let mut h = String::from("trace_id,t,label,indicator");
        for s in 0..spec.window_len {
            for name in CHANNEL_NAMES {
                let _ = write!(h, ",s{s}_{name}");
            }
        }
        h
    }

    pub fn split_to_csv(&self, id: SplitId) -> String {
        samples_to_csv(&self.spec, self.split(id))
    }

    /// Writes `manifest.json` plus one CSV per split into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), MonitorError> {
        std::fs::create_dir_all(dir).map_err(|e| MonitorError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &manifest)?;
        for id in SplitId::ALL {
            write_file(&dir.join(format!("{}.csv", id.name())), &self.split_to_csv(id))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset, MonitorError> {
        let manifest_path = dir.join("manifest.json");
        let manifest: DatasetManifest = serde_json::from_str(&read_file(&manifest_path)?)
            .map_err(|e| MonitorError::Format {
                path: manifest_path.display().to_string(),
                reason: e.to_string(),
            })?;
        let spec = FeatureSpec {
            window_len: manifest.window_len,
            rate_deadband: manifest.rate_deadband,
        };
        let mut splits = Vec::new();
        for id in SplitId::ALL {
            let path = dir.join(format!("{}.csv", id.name()));
            splits.push(samples_from_csv(&spec, &read_file(&path)?).map_err(|reason| {
                MonitorError::Format { path: path.display().to_string(), reason }
            })?);
        }
        let test = splits.pop().expect("three splits");
        let val = splits.pop().expect("three splits");
        let train = splits.pop().expect("three splits");
        Ok(Dataset { spec, horizon: manifest.horizon, stats: manifest.stats, train, val, test })
    }
}

pub(crate) fn samples_to_csv(spec: &FeatureSpec, samples: &[WindowSample]) -> String {
    let mut out = Dataset::split_csv_header(spec);
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{},{},{}", s.trace_id, s.t, s.label, s.indicator);
        for v in &s.features {
            let mut buf = ryu_like(*v);
            buf.insert(0, ',');
            out.push_str(&buf);
        }
        out.push('\n');
    }
    out
}

pub(crate) fn samples_from_csv(spec: &FeatureSpec, csv: &str) -> Result<Vec<WindowSample>, String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != Dataset::split_csv_header(spec) {
        return Err(format!("unexpected header: {header}"));
    }
    let width = spec.flat_width();
    let mut samples = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let trace_id = fields.next().ok_or_else(|| format!("line {}: missing trace_id", ln + 2))?;
        let parse_err = |what: &str| format!("line {}: bad {what}", ln + 2);
        let t: u32 = fields.next().ok_or_else(|| parse_err("t"))?.parse().map_err(|_| parse_err("t"))?;
        let label: u8 = fields.next().ok_or_else(|| parse_err("label"))?.parse().map_err(|_| parse_err("label"))?;
        let indicator: u8 =
            fields.next().ok_or_else(|| parse_err("indicator"))?.parse().map_err(|_| parse_err("indicator"))?;
        let features: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<_, _>>()?;
        if features.len() != width {
            return Err(format!("line {}: {} features, expected {width}", ln + 2, features.len()));
        }
        samples.push(WindowSample { trace_id: trace_id.to_string(), t, label, indicator, features });
    }
    Ok(samples)
}

/// Shortest representation that round-trips the exact f64 bits.
pub fn ryu_like(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>().map(f64::to_bits) != Ok(v.to_bits()) {
        s = format!("{v:.17}");
    }
    s
}

fn write_file(path: &Path, content: &str) -> Result<(), MonitorError> {
    std::fs::write(path, content).map_err(|e| MonitorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_file(path: &Path) -> Result<String, MonitorError> {
    std::fs::read_to_string(path).map_err(|e| MonitorError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apsim::{
        default_fault_mix, default_profiles, generate_corpus, run_episode, CorpusConfig, LoopConfig,
    };
    use crate::rules::RuleEngine;

    fn small_corpus() -> Vec<Trace> {
        let cfg = CorpusConfig {
            profiles: default_profiles()[..2].to_vec(),
            episodes_per_profile: 10,
            horizon: 96,
            seed: 11,
            fault_mix: default_fault_mix(),
            loop_config: LoopConfig::default(),
        };
        generate_corpus(&cfg).unwrap().0
    }

    #[test]
    fn zero_hazard_trace_yields_all_safe_labels() {
        let p = &default_profiles()[0];
        let tr = run_episode(p, 60, &[], None, 3, 1, &LoopConfig::default()).unwrap();
        let ds = build_dataset(
            &[tr],
            &FeatureSpec::default(),
            6,
            &RuleEngine::default_engine(),
            120.0,
        )
        .unwrap();
        assert!(ds.train.iter().all(|s| s.label == 0));
        assert_eq!(ds.train.len(), 60 - 6 - 5);
    }

    #[test]
    fn hazard_at_t_plus_one_marks_the_window_unsafe() {
        let p = &default_profiles()[0];
        let mut tr = run_episode(p, 40, &[], None, 5, 1, &LoopConfig::default()).unwrap();
        tr.steps[20].hazard = crate::apsim::HAZARD_H2;
        let ds = build_dataset(
            &[tr],
            &FeatureSpec::default(),
            6,
            &RuleEngine::default_engine(),
            120.0,
        )
        .unwrap();
        let find = |t: u32| ds.train.iter().find(|s| s.t == t).unwrap();
        assert_eq!(find(19).label, 1, "hazard at t+1 is inside (t, t+6]");
        assert_eq!(find(14).label, 1, "hazard at t+6 is the far boundary");
        assert_eq!(find(13).label, 0, "hazard at t+7 is outside");
        assert_eq!(find(20).label, 0, "hazard at t itself does not look back");
    }

    #[test]
    fn label_prevalence_matches_brute_force_recount() {
        let traces = small_corpus();
        let spec = FeatureSpec::default();
        let ds = build_dataset(&traces, &spec, 6, &RuleEngine::default_engine(), 120.0).unwrap();
        let mut expected = 0usize;
        let mut total = 0usize;
        for tr in &traces {
            for t in 5..=(tr.steps.len() - 7) {
                total += 1;
                let mut any = false;
                for k in 1..=6usize {
                    if tr.steps[t + k].hazard != HAZARD_NONE {
                        any = true;
                    }
                }
                expected += any as usize;
            }
        }
        let got: usize = SplitId::ALL.iter().map(|&id| ds.unsafe_count(id)).sum();
        let n: usize = SplitId::ALL.iter().map(|&id| ds.split(id).len()).sum();
        assert_eq!(n, total);
        assert_eq!(got, expected);
    }

    #[test]
    fn splits_partition_traces_without_leakage() {
        let traces = small_corpus();
        let ds = build_dataset(&traces, &FeatureSpec::default(), 6, &RuleEngine::default_engine(), 120.0).unwrap();
        let ids = |s: &[WindowSample]| {
            s.iter().map(|x| x.trace_id.clone()).collect::<std::collections::BTreeSet<_>>()
        };
        let tr = ids(&ds.train);
        let va = ids(&ds.val);
        let te = ids(&ds.test);
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), traces.len());
        assert_eq!(ds.train.len(), 12 * (96 - 11));
        assert_eq!(ds.val.len(), 4 * (96 - 11));
        assert_eq!(ds.test.len(), 4 * (96 - 11));
    }

    #[test]
    fn normalization_fits_train_split_only() {
        let traces = small_corpus();
        let spec = FeatureSpec::default();
        let ds = build_dataset(&traces, &spec, 6, &RuleEngine::default_engine(), 120.0).unwrap();
        let mut raw = Vec::new();
        for (i, tr) in traces.iter().enumerate() {
            if split_of(i) == SplitId::Train {
                for t in 5..=(tr.steps.len() - 7) {
                    raw.push(window_features(tr, t, &spec));
                }
            }
        }
        let stats = ChannelStats::fit(&raw, NUM_CHANNELS);
        assert_eq!(stats, ds.stats);
        // Normalized training data has near-zero mean per channel.
        let mut sum = vec![0.0f64; NUM_CHANNELS];
        let mut count = 0usize;
        for s in &ds.train {
            for (i, v) in s.features.iter().enumerate() {
                sum[i % NUM_CHANNELS] += v;
            }
            count += spec.window_len;
        }
        for c in 0..NUM_CHANNELS {
            assert!((sum[c] / count as f64).abs() < 1e-9, "channel {c}");
        }
    }

    #[test]
    fn short_trace_is_rejected() {
        let p = &default_profiles()[0];
        let tr = run_episode(p, 10, &[], None, 1, 1, &LoopConfig::default()).unwrap();
        let err = build_dataset(&[tr], &FeatureSpec::default(), 6, &RuleEngine::default_engine(), 120.0);
        assert!(matches!(err, Err(MonitorError::TraceTooShort { .. })));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let traces = small_corpus();
        let ds = build_dataset(&traces, &FeatureSpec::default(), 6, &RuleEngine::default_engine(), 120.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds, back);
        let again = back.clone();
        again.save(dir.path()).unwrap();
        let reload = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, reload);
    }

    #[test]
    fn indicator_comes_from_rule_engine_on_raw_window() {
        let traces = small_corpus();
        let engine = RuleEngine::default_engine();
        let ds = build_dataset(&traces, &FeatureSpec::default(), 6, &engine, 120.0).unwrap();
        // Spot-check a handful of samples against a direct evaluation.
        for s in ds.test.iter().step_by(37) {
            let tr = traces.iter().find(|tr| tr.trace_id() == s.trace_id).unwrap();
            let t = s.t as usize;
            let bg: Vec<f64> = tr.steps[t - 5..=t].iter().map(|x| x.bg_sensed).collect();
            let iob: Vec<f64> = tr.steps[t - 5..=t].iter().map(|x| x.iob).collect();
            let rate: Vec<f64> = tr.steps[t - 5..=t].iter().map(|x| x.insulin_rate).collect();
            let (_, p) = engine
                .monitor_window(WindowView { bg: &bg, iob: &iob, rate: &rate }, 120.0)
                .unwrap();
            assert_eq!(s.indicator, (p >= 0.5) as u8);
        }
    }
}
