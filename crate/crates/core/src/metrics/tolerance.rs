//! Tolerance-window confusion scoring for sequential predictions.
//!
//! A step t is ground-truth-positive when any true positive occurs in
//! the forward window [t, t+delta]. Such a step scores as a true
//! positive when any prediction fired in the lookback [t-delta, t],
//! else a false negative. Ground-truth-negative steps score pointwise:
//! false positive when the prediction at t fired, else true negative.
//! Windows clamp at trace edges and never cross trace boundaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apsim::Trace;
use crate::monitors::WindowSample;

use super::scores::ConfusionCounts;
use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToleranceParams {
    /// Slack steps applied to both the forward ground-truth window
    /// and the prediction lookback.
    pub delta: usize,
}

impl Default for ToleranceParams {
    fn default() -> Self {
        ToleranceParams { delta: 6 }
    }
}

/// Sums the per-trace confusion counts for aligned prediction and
/// ground-truth series. Any nonzero value counts as a positive.
pub fn tolerance_confusion(
    p: &[Vec<u8>],
    g: &[Vec<u8>],
    params: &ToleranceParams,
) -> Result<ConfusionCounts, MetricsError> {
    if p.len() != g.len() {
        return Err(MetricsError::LengthMismatch {
            what: "trace count".into(),
            left: p.len(),
            right: g.len(),
        });
    }
    for (i, (pt, gt)) in p.iter().zip(g).enumerate() {
        if pt.len() != gt.len() {
            return Err(MetricsError::LengthMismatch {
                what: format!("series length of trace {i}"),
                left: pt.len(),
                right: gt.len(),
            });
        }
    }
    Ok(p.par_iter()
        .zip(g.par_iter())
        .map(|(pt, gt)| trace_counts(pt, gt, params.delta))
        .reduce(ConfusionCounts::default, ConfusionCounts::merge))
}

/// Single-trace scan: one pass from the right records the next
/// ground-truth positive at or after each step, one pass from the
/// left records the last prediction at or before each step, then
/// every step classifies in O(1).
fn trace_counts(p: &[u8], g: &[u8], delta: usize) -> ConfusionCounts {
    let n = p.len();
    let mut counts = ConfusionCounts::default();
    if n == 0 {
        return counts;
    }
    let mut next_g = vec![usize::MAX; n];
    let mut next = usize::MAX;
    for t in (0..n).rev() {
        if g[t] != 0 {
            next = t;
        }
        next_g[t] = next;
    }
    let mut last_p = vec![usize::MAX; n];
    let mut last = usize::MAX;
    for t in 0..n {
        if p[t] != 0 {
            last = t;
        }
        last_p[t] = last;
    }
    for t in 0..n {
        let gt_pos = next_g[t] != usize::MAX && next_g[t] <= t.saturating_add(delta);
        if gt_pos {
            let covered = last_p[t] != usize::MAX && last_p[t] + delta >= t;
            if covered {
                counts.tp += 1;
            } else {
                counts.fn_ += 1;
            }
        } else if p[t] != 0 {
            counts.fp += 1;
        } else {
            counts.tn += 1;
        }
    }
    counts
}

/// Ground-truth series per trace: 1 where the step carries a hazard.
pub fn hazard_series(traces: &[Trace]) -> Vec<Vec<u8>> {
    traces
        .iter()
        .map(|tr| tr.steps.iter().map(|s| (s.hazard != 0) as u8).collect())
        .collect()
}

/// Prediction series per trace: 1 at each anchor step whose sample
/// was predicted unsafe, 0 everywhere else, including steps no window
/// anchors (the monitor is silent there).
pub fn prediction_series(
    traces: &[Trace],
    samples: &[WindowSample],
    preds: &[bool],
) -> Result<Vec<Vec<u8>>, MetricsError> {
    if samples.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            what: "samples vs predictions".into(),
            left: samples.len(),
            right: preds.len(),
        });
    }
    let index: std::collections::HashMap<String, usize> =
        traces.iter().enumerate().map(|(i, tr)| (tr.trace_id(), i)).collect();
    let mut series: Vec<Vec<u8>> = traces.iter().map(|tr| vec![0; tr.steps.len()]).collect();
    for (i, (s, &pred)) in samples.iter().zip(preds).enumerate() {
        let trace = *index
            .get(&s.trace_id)
            .ok_or_else(|| MetricsError::UnknownTrace { trace_id: s.trace_id.clone() })?;
        let t = s.t as usize;
        if t >= series[trace].len() {
            return Err(MetricsError::Misaligned {
                index: i,
                reason: format!("anchor {t} beyond trace of {} steps", series[trace].len()),
            });
        }
        if pred {
            series[trace][t] = 1;
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apsim::TraceStep;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Literal transcription of the tolerance-table cell rules with
    /// explicit window loops, kept independent of the production scan.
    fn oracle(p: &[u8], g: &[u8], delta: usize) -> ConfusionCounts {
        let n = p.len();
        let mut c = ConfusionCounts::default();
        for t in 0..n {
            let hi = (t + delta).min(n.saturating_sub(1));
            let gt_pos = (t..=hi).any(|u| g[u] != 0);
            if gt_pos {
                let lo = t.saturating_sub(delta);
                if (lo..=t).any(|u| p[u] != 0) {
                    c.tp += 1;
                } else {
                    c.fn_ += 1;
                }
            } else if p[t] != 0 {
                c.fp += 1;
            } else {
                c.tn += 1;
            }
        }
        c
    }

    fn random_series(rng: &mut ChaCha8Rng, len: usize, density: f64) -> Vec<u8> {
        (0..len).map(|_| (rng.gen::<f64>() < density) as u8).collect()
    }

    #[test]
    fn delta_zero_is_the_pointwise_confusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..200 {
            let len = rng.gen_range(1..40);
            let p = random_series(&mut rng, len, 0.3);
            let g = random_series(&mut rng, len, 0.3);
            let got =
                tolerance_confusion(&[p.clone()], &[g.clone()], &ToleranceParams { delta: 0 })
                    .unwrap();
            let mut want = ConfusionCounts::default();
            for t in 0..len {
                match (g[t] != 0, p[t] != 0) {
                    (true, true) => want.tp += 1,
                    (true, false) => want.fn_ += 1,
                    (false, true) => want.fp += 1,
                    (false, false) => want.tn += 1,
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn all_zero_series_are_all_true_negatives() {
        let p = vec![vec![0u8; 30]];
        let g = vec![vec![0u8; 30]];
        let c = tolerance_confusion(&p, &g, &ToleranceParams::default()).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, tn: 30, fn_: 0 });
    }

    #[test]
    fn worked_example_matches_hand_computation() {
        // delta 2: the alarm at step 1 covers the three steps whose
        // forward window reaches the positive at step 3.
        let p = vec![vec![0, 1, 0, 0, 0]];
        let g = vec![vec![0, 0, 0, 1, 0]];
        let params = ToleranceParams { delta: 2 };
        let c = tolerance_confusion(&p, &g, &params).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 3, fp: 0, tn: 2, fn_: 0 });
        assert_eq!(c, oracle(&p[0], &g[0], 2));
    }

    #[test]
    fn production_matches_the_literal_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for i in 0..10_000 {
            let len = rng.gen_range(1..=50);
            let delta = rng.gen_range(0..=4);
            let density = [0.05, 0.2, 0.5, 0.9][i % 4];
            let p = random_series(&mut rng, len, density);
            let g = random_series(&mut rng, len, 0.15);
            let got =
                tolerance_confusion(&[p.clone()], &[g.clone()], &ToleranceParams { delta })
                    .unwrap();
            assert_eq!(got, oracle(&p, &g, delta), "instance {i}: p={p:?} g={g:?} delta={delta}");
        }
    }

    #[test]
    fn windows_clamp_at_trace_edges() {
        // delta longer than the trace: the single late positive makes
        // every step ground-truth-positive, and the step-0 alarm
        // covers them all through the clamped lookback.
        let p = vec![vec![1, 0, 0, 0, 0]];
        let g = vec![vec![0, 0, 0, 0, 1]];
        let c = tolerance_confusion(&p, &g, &ToleranceParams { delta: 10 }).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 5, fp: 0, tn: 0, fn_: 0 });
    }

    #[test]
    fn counts_never_cross_trace_boundaries() {
        // Alarm at the end of trace 0 must not cover the positive at
        // the start of trace 1.
        let p = vec![vec![0, 0, 1], vec![0, 0, 0]];
        let g = vec![vec![0, 0, 0], vec![1, 0, 0]];
        let c = tolerance_confusion(&p, &g, &ToleranceParams { delta: 2 }).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.fp, 1);
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn larger_delta_never_loses_detections_nor_keeps_false_alarms() {
        // True positives only grow with delta (both windows widen);
        // false positives only shrink (fewer steps stay ground-truth
        // negative). Recall itself is not monotone: widening the
        // forward window can mint positives whose lookback precedes
        // the first alarm.
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..500 {
            let len = rng.gen_range(1..=50);
            let p = random_series(&mut rng, len, 0.25);
            let g = random_series(&mut rng, len, 0.2);
            let mut prev: Option<ConfusionCounts> = None;
            for delta in 0..=4 {
                let c = tolerance_confusion(&[p.clone()], &[g.clone()], &ToleranceParams { delta })
                    .unwrap();
                if let Some(prior) = prev {
                    assert!(c.tp >= prior.tp, "tp dropped from {prior:?} to {c:?}");
                    assert!(c.fp <= prior.fp, "fp grew from {prior:?} to {c:?}");
                }
                prev = Some(c);
            }
        }
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let err = tolerance_confusion(&[vec![0, 1]], &[], &ToleranceParams::default()).unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));
        let err = tolerance_confusion(&[vec![0, 1]], &[vec![0, 1, 0]], &ToleranceParams::default())
            .unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));
    }

    fn toy_trace(profile: &str, episode: u32, hazards: &[u8]) -> Trace {
        Trace {
            profile_id: profile.to_string(),
            episode,
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

    #[test]
    fn series_builders_place_anchors_and_hazards() {
        let traces = vec![toy_trace("a", 0, &[0, 0, 2, 0]), toy_trace("b", 1, &[0, 1, 0, 0])];
        let g = hazard_series(&traces);
        assert_eq!(g, vec![vec![0, 0, 1, 0], vec![0, 1, 0, 0]]);

        let sample = |id: &str, t: u32| WindowSample {
            trace_id: id.into(),
            t,
            label: 0,
            indicator: 0,
            features: vec![],
        };
        let samples = vec![sample("a_ep000", 2), sample("b_ep001", 0), sample("b_ep001", 3)];
        let p = prediction_series(&traces, &samples, &[true, false, true]).unwrap();
        assert_eq!(p, vec![vec![0, 0, 1, 0], vec![0, 0, 0, 1]]);

        let err = prediction_series(&traces, &[sample("c_ep000", 0)], &[true]).unwrap_err();
        assert!(matches!(err, MetricsError::UnknownTrace { .. }));
        let err = prediction_series(&traces, &[sample("a_ep000", 9)], &[true]).unwrap_err();
        assert!(matches!(err, MetricsError::Misaligned { .. }));
    }
}
