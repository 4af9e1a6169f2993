//! Robustness accounting: how a monitor's verdicts move when its
//! inputs are perturbed, scored against the same ground truth.

use serde::{Deserialize, Serialize};

use crate::apsim::Trace;
use crate::monitors::{Monitor, WindowSample};

use super::scores::ScoredBlock;
use super::tolerance::{hazard_series, prediction_series, tolerance_confusion, ToleranceParams};
use super::MetricsError;

/// Identifies the perturbation a report was scored under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTag {
    pub kind: String,
    pub magnitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipCounts {
    pub safe_to_unsafe: u64,
    pub unsafe_to_safe: u64,
}

impl FlipCounts {
    pub fn total(&self) -> u64 {
        self.safe_to_unsafe + self.unsafe_to_safe
    }
}

/// Pairwise verdict flips, keyed on the clean prediction.
pub fn flip_counts(clean: &[bool], perturbed: &[bool]) -> Result<FlipCounts, MetricsError> {
    if clean.len() != perturbed.len() {
        return Err(MetricsError::LengthMismatch {
            what: "clean vs perturbed verdicts".into(),
            left: clean.len(),
            right: perturbed.len(),
        });
    }
    let mut flips = FlipCounts::default();
    for (&c, &p) in clean.iter().zip(perturbed) {
        match (c, p) {
            (false, true) => flips.safe_to_unsafe += 1,
            (true, false) => flips.unsafe_to_safe += 1,
            _ => {}
        }
    }
    Ok(flips)
}

/// One monitor scored clean and perturbed under a single perturbation
/// setting. Field order is the emitted JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model: String,
    pub perturbation: PerturbationTag,
    pub clean: ScoredBlock,
    pub perturbed: ScoredBlock,
    /// Fraction of evaluation samples whose verdict flipped.
    pub robustness_error: f64,
    pub flips: FlipCounts,
}

/// A monitor's verdicts on the clean evaluation set together with
/// their tolerance-window score, computed once and reused across
/// every perturbation scored against the same clean set.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanEval {
    pub preds: Vec<bool>,
    pub block: ScoredBlock,
}

pub fn clean_eval(
    monitor: &Monitor,
    samples: &[WindowSample],
    traces: &[Trace],
    params: &ToleranceParams,
) -> Result<CleanEval, MetricsError> {
    let verdicts = monitor.predict_batch(samples)?;
    let preds: Vec<bool> = verdicts.iter().map(|v| v.predicted_unsafe()).collect();
    let block = scored_block(traces, samples, &preds, params)?;
    Ok(CleanEval { preds, block })
}

/// Scores a monitor's verdicts on `samples` against the hazard series
/// of `traces` under the tolerance window.
pub fn tolerance_block(
    monitor: &Monitor,
    samples: &[WindowSample],
    traces: &[Trace],
    params: &ToleranceParams,
) -> Result<ScoredBlock, MetricsError> {
    Ok(clean_eval(monitor, samples, traces, params)?.block)
}

fn scored_block(
    traces: &[Trace],
    samples: &[WindowSample],
    preds: &[bool],
    params: &ToleranceParams,
) -> Result<ScoredBlock, MetricsError> {
    let p = prediction_series(traces, samples, preds)?;
    let g = hazard_series(traces);
    let counts = tolerance_confusion(&p, &g, params)?;
    Ok(ScoredBlock::from_counts(&counts))
}

/// Assembles one report from a precomputed clean evaluation and an
/// aligned perturbed sample set: both tolerance-scored blocks against
/// the same hazard ground truth, verdict flips, and the flip fraction.
pub fn robustness_report_from(
    monitor: &Monitor,
    clean_samples: &[WindowSample],
    clean: &CleanEval,
    perturbed: &[WindowSample],
    tag: PerturbationTag,
    traces: &[Trace],
    params: &ToleranceParams,
) -> Result<RobustnessReport, MetricsError> {
    if clean_samples.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    if clean_samples.len() != perturbed.len() {
        return Err(MetricsError::LengthMismatch {
            what: "clean vs perturbed samples".into(),
            left: clean_samples.len(),
            right: perturbed.len(),
        });
    }
    if clean.preds.len() != clean_samples.len() {
        return Err(MetricsError::LengthMismatch {
            what: "clean samples vs clean verdicts".into(),
            left: clean_samples.len(),
            right: clean.preds.len(),
        });
    }
    for (i, (c, p)) in clean_samples.iter().zip(perturbed).enumerate() {
        if c.trace_id != p.trace_id || c.t != p.t {
            return Err(MetricsError::Misaligned {
                index: i,
                reason: format!(
                    "clean anchor ({}, {}) vs perturbed anchor ({}, {})",
                    c.trace_id, c.t, p.trace_id, p.t
                ),
            });
        }
    }

    let perturbed_preds: Vec<bool> = monitor
        .predict_batch(perturbed)?
        .iter()
        .map(|v| v.predicted_unsafe())
        .collect();

    let flips = flip_counts(&clean.preds, &perturbed_preds)?;
    let robustness_error = flips.total() as f64 / clean_samples.len() as f64;

    Ok(RobustnessReport {
        model: monitor.name().to_string(),
        perturbation: tag,
        clean: clean.block,
        perturbed: scored_block(traces, perturbed, &perturbed_preds, params)?,
        robustness_error,
        flips,
    })
}

/// Runs one monitor over an aligned clean/perturbed sample pair and
/// assembles the full report. Prefer [`clean_eval`] plus
/// [`robustness_report_from`] when scoring many perturbations of the
/// same clean set, so the clean pass runs once.
pub fn robustness_report(
    monitor: &Monitor,
    clean: &[WindowSample],
    perturbed: &[WindowSample],
    tag: PerturbationTag,
    traces: &[Trace],
    params: &ToleranceParams,
) -> Result<RobustnessReport, MetricsError> {
    if clean.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let base = clean_eval(monitor, clean, traces, params)?;
    robustness_report_from(monitor, clean, &base, perturbed, tag, traces, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apsim::TraceStep;
    use crate::monitors::{ChannelStats, FeatureSpec, RuleMonitor, NUM_CHANNELS};

    #[test]
    fn flips_key_on_the_clean_verdict() {
        let clean = vec![false, false, true, true, false, true];
        let pert = vec![true, false, false, true, true, false];
        let f = flip_counts(&clean, &pert).unwrap();
        assert_eq!(f, FlipCounts { safe_to_unsafe: 2, unsafe_to_safe: 2 });
        assert_eq!(f.total(), 4);

        let same = flip_counts(&clean, &clean).unwrap();
        assert_eq!(same, FlipCounts::default());

        let err = flip_counts(&clean, &pert[..3]).unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));
    }

    /// A window sitting quietly at 110 mg/dL under basal insulin.
    fn quiet_features() -> Vec<f64> {
        let mut f = Vec::new();
        for _ in 0..6 {
            f.extend_from_slice(&[110.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        f
    }

    /// Low and falling BG while insulin keeps flowing: the rule table
    /// flags this unsafe.
    fn risky_features() -> Vec<f64> {
        let mut f = Vec::new();
        for s in 0..6 {
            let bg = 90.0 - 5.0 * s as f64;
            f.extend_from_slice(&[bg, 1.2, -5.0, 0.01, 1.0, 0.0, 0.0, 0.0, 1.0]);
        }
        f
    }

    fn sample(trace_id: &str, t: u32, features: Vec<f64>) -> WindowSample {
        WindowSample { trace_id: trace_id.into(), t, label: 0, indicator: 0, features }
    }

    fn toy_trace(hazards: &[u8]) -> Trace {
        Trace {
            profile_id: "p".into(),
            episode: 0,
            steps: hazards
                .iter()
                .enumerate()
                .map(|(t, &h)| TraceStep {
                    t: t as u32,
                    bg_true: 120.0,
                    bg_sensed: 120.0,
                    iob: 0.0,
                    insulin_rate: 1.0,
                    bolus: 0.0,
                    carbs: 0.0,
                    fault_active: false,
                    hazard: h,
                })
                .collect(),
        }
    }

    fn rule_monitor() -> Monitor {
        Monitor::Rule(RuleMonitor::new(
            FeatureSpec::default(),
            ChannelStats::identity(NUM_CHANNELS),
            120.0,
        ))
    }

    #[test]
    fn three_flips_in_ten_give_error_0_3() {
        let monitor = rule_monitor();
        let trace = toy_trace(&[0; 10]);
        let id = trace.trace_id();
        let clean: Vec<WindowSample> =
            (0..10).map(|t| sample(&id, t, quiet_features())).collect();
        let mut perturbed = clean.clone();
        for t in [2usize, 5, 8] {
            perturbed[t].features = risky_features();
        }
        let tag = PerturbationTag { kind: "gaussian".into(), magnitude: 0.5, seed: 7 };
        let report = robustness_report(
            &monitor,
            &clean,
            &perturbed,
            tag.clone(),
            &[trace],
            &ToleranceParams { delta: 0 },
        )
        .unwrap();

        assert_eq!(report.model, "rule");
        assert_eq!(report.perturbation, tag);
        assert!((report.robustness_error - 0.3).abs() < 1e-15);
        assert_eq!(report.flips, FlipCounts { safe_to_unsafe: 3, unsafe_to_safe: 0 });
        // Clean never fires on an all-negative trace; perturbed fires
        // three false alarms.
        assert_eq!(report.clean.fp, 0);
        assert_eq!(report.clean.tn, 10);
        assert_eq!(report.perturbed.fp, 3);
        assert_eq!(report.perturbed.tn, 7);
    }

    #[test]
    fn both_blocks_score_against_the_same_hazards() {
        let monitor = rule_monitor();
        let trace = toy_trace(&[0, 0, 0, 1, 0, 0, 0, 0, 0, 0]);
        let id = trace.trace_id();
        // The hazard at t=3 makes steps 1..=3 ground-truth positive;
        // an alarm at t=1 sits inside all three lookbacks.
        let clean: Vec<WindowSample> = (0..10)
            .map(|t| sample(&id, t, if t == 1 { risky_features() } else { quiet_features() }))
            .collect();
        let perturbed = clean.clone();
        let report = robustness_report(
            &monitor,
            &clean,
            &perturbed,
            PerturbationTag { kind: "gaussian".into(), magnitude: 0.1, seed: 1 },
            &[trace],
            &ToleranceParams { delta: 2 },
        )
        .unwrap();
        assert_eq!(report.robustness_error, 0.0);
        assert_eq!(report.clean, report.perturbed);
        assert_eq!(report.clean.tp, 3);
        assert_eq!(report.clean.fn_, 0);
        assert_eq!(report.clean.fp, 0);
        assert_eq!(report.clean.tn, 7);
        assert!((report.clean.recall - 1.0).abs() < 1e-15);
    }

    #[test]
    fn precomputed_clean_path_matches_the_one_shot_report() {
        let monitor = rule_monitor();
        let trace = toy_trace(&[0, 0, 1, 0, 0, 0]);
        let id = trace.trace_id();
        let clean: Vec<WindowSample> = (0..6)
            .map(|t| sample(&id, t, if t == 1 { risky_features() } else { quiet_features() }))
            .collect();
        let mut perturbed = clean.clone();
        perturbed[4].features = risky_features();
        let tag = PerturbationTag { kind: "fgsm_whitebox".into(), magnitude: 0.1, seed: 0 };
        let params = ToleranceParams { delta: 1 };
        let traces = vec![trace];

        let one_shot =
            robustness_report(&monitor, &clean, &perturbed, tag.clone(), &traces, &params).unwrap();
        let base = clean_eval(&monitor, &clean, &traces, &params).unwrap();
        let composed =
            robustness_report_from(&monitor, &clean, &base, &perturbed, tag, &traces, &params)
                .unwrap();
        assert_eq!(one_shot, composed);
        assert_eq!(base.block, tolerance_block(&monitor, &clean, &traces, &params).unwrap());

        let err = robustness_report_from(
            &monitor,
            &clean,
            &CleanEval { preds: vec![false; 3], block: base.block },
            &perturbed,
            PerturbationTag { kind: "x".into(), magnitude: 0.1, seed: 0 },
            &traces,
            &params,
        )
        .unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));
    }

    #[test]
    fn misaligned_pairs_are_rejected() {
        let monitor = rule_monitor();
        let trace = toy_trace(&[0; 4]);
        let id = trace.trace_id();
        let clean = vec![sample(&id, 0, quiet_features()), sample(&id, 1, quiet_features())];
        let mut shifted = clean.clone();
        shifted[1].t = 3;
        let err = robustness_report(
            &monitor,
            &clean,
            &shifted,
            PerturbationTag { kind: "gaussian".into(), magnitude: 0.1, seed: 1 },
            std::slice::from_ref(&trace),
            &ToleranceParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MetricsError::Misaligned { index: 1, .. }));

        let err = robustness_report(
            &monitor,
            &clean,
            &clean[..1],
            PerturbationTag { kind: "gaussian".into(), magnitude: 0.1, seed: 1 },
            std::slice::from_ref(&trace),
            &ToleranceParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));

        let err = robustness_report(
            &monitor,
            &[],
            &[],
            PerturbationTag { kind: "gaussian".into(), magnitude: 0.1, seed: 1 },
            &[trace],
            &ToleranceParams::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MetricsError::EmptyBatch));
    }

    #[test]
    fn report_json_emits_fields_in_schema_order() {
        let report = RobustnessReport {
            model: "mlp_s1".into(),
            perturbation: PerturbationTag { kind: "fgsm_whitebox".into(), magnitude: 0.2, seed: 0 },
            clean: ScoredBlock {
                tp: 1, fp: 0, tn: 2, fn_: 0,
                precision: 1.0, recall: 1.0, acc: 1.0, f1: 1.0,
            },
            perturbed: ScoredBlock {
                tp: 0, fp: 1, tn: 1, fn_: 1,
                precision: 0.0, recall: 0.0, acc: 1.0 / 3.0, f1: 0.0,
            },
            robustness_error: 2.0 / 3.0,
            flips: FlipCounts { safe_to_unsafe: 1, unsafe_to_safe: 1 },
        };
        let json = serde_json::to_string(&report).unwrap();
        let order = ["\"model\"", "\"perturbation\"", "\"clean\"", "\"perturbed\"", "\"robustness_error\"", "\"flips\""];
        let mut at = 0;
        for key in order {
            let pos = json[at..].find(key).unwrap_or_else(|| panic!("{key} after byte {at} in {json}"));
            at += pos;
        }
        let tag_order = ["\"kind\"", "\"magnitude\"", "\"seed\""];
        let mut at = json.find("\"perturbation\"").unwrap();
        for key in tag_order {
            let pos = json[at..].find(key).unwrap();
            at += pos;
        }
        let back: RobustnessReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
