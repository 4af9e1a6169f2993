//! Acceptance snapshot: evaluates the run-level acceptance criteria
//! (clean performance, attack effectiveness, semantic-training gains,
//! black-box comparison) from a completed run's artifacts. The
//! numeric and property criteria (gradients, oracle equivalence,
//! determinism, degeneracy) live in the test suite.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use robustmon_core::metrics::{RobustnessReport, ScoredBlock};
use robustmon_core::monitors::MonitorKind;

use crate::config::{kind_slug, ExperimentConfig};
use crate::stages::{BlackboxMeta, BLACKBOX_META_REL, CLEAN_SCORES_REL, REPORTS_REL};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub all_pass: bool,
    pub note: String,
    pub criteria: Vec<CriterionResult>,
}

const WB: &str = "fgsm_whitebox";
const BB: &str = "fgsm_blackbox";
const GAUSS: &str = "gaussian";

struct RunData {
    clean: BTreeMap<String, ScoredBlock>,
    bb_meta: BTreeMap<String, BlackboxMeta>,
    /// robustness_error keyed by (model, kind, magnitude bits).
    errors: HashMap<(String, String, u64), f64>,
}

impl RunData {
    fn load(out: &Path) -> Result<RunData, CliError> {
        let read = |rel: &str| -> Result<String, CliError> {
            let path = out.join(rel);
            std::fs::read_to_string(&path).map_err(|e| CliError::Pipeline {
                message: format!("{}: {e} (run `robustmon evaluate` first)", path.display()),
            })
        };
        let parse_err = |rel: &str, e: serde_json::Error| CliError::Pipeline {
            message: format!("{rel}: {e}"),
        };
        let clean: BTreeMap<String, ScoredBlock> =
            serde_json::from_str(&read(CLEAN_SCORES_REL)?).map_err(|e| parse_err(CLEAN_SCORES_REL, e))?;
        let reports: Vec<RobustnessReport> =
            serde_json::from_str(&read(REPORTS_REL)?).map_err(|e| parse_err(REPORTS_REL, e))?;
        let bb_meta: BTreeMap<String, BlackboxMeta> =
            serde_json::from_str(&read(BLACKBOX_META_REL)?).map_err(|e| parse_err(BLACKBOX_META_REL, e))?;
        let mut errors = HashMap::new();
        for r in &reports {
            errors.insert(
                (r.model.clone(), r.perturbation.kind.clone(), r.perturbation.magnitude.to_bits()),
                r.robustness_error,
            );
        }
        Ok(RunData { clean, bb_meta, errors })
    }

    /// Mean clean F1 over a group of models; None if any is missing.
    fn mean_clean_f1(&self, names: &[String]) -> Option<f64> {
        mean(names.iter().map(|n| self.clean.get(n).map(|b| b.f1)))
    }

    /// Mean robustness error over a group at one perturbation cell.
    fn mean_err(&self, names: &[String], kind: &str, magnitude: f64) -> Option<f64> {
        mean(names.iter().map(|n| {
            self.errors.get(&(n.clone(), kind.to_string(), magnitude.to_bits())).copied()
        }))
    }

    fn mean_agreement(&self, names: &[String]) -> Option<f64> {
        mean(names.iter().map(|n| self.bb_meta.get(n).map(|m| m.agreement)))
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v?;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

fn group(cfg: &ExperimentConfig, kind: MonitorKind, baseline: bool) -> Vec<String> {
    cfg.model_plans()
        .into_iter()
        .filter(|p| p.kind == kind && p.is_baseline() == baseline)
        .map(|p| p.name)
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "missing".into(),
    }
}

pub fn acceptance_snapshot(cfg: &ExperimentConfig, out: &Path) -> Result<AcceptanceSummary, CliError> {
    let data = RunData::load(out)?;
    let archs = [MonitorKind::Mlp, MonitorKind::Lstm];
    let baseline: Vec<Vec<String>> = archs.iter().map(|&k| group(cfg, k, true)).collect();
    let custom: Vec<Vec<String>> = archs.iter().map(|&k| group(cfg, k, false)).collect();

    let mut criteria = Vec::new();

    // 1: baseline monitors detect well; the rule table alone does not.
    {
        let base_f1: Vec<Option<f64>> = baseline.iter().map(|g| data.mean_clean_f1(g)).collect();
        let cust_f1: Vec<Option<f64>> = custom.iter().map(|g| data.mean_clean_f1(g)).collect();
        let rule_f1 = data.clean.get("rule").map(|b| b.f1);
        let best = base_f1
            .iter()
            .chain(&cust_f1)
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let pass = base_f1.iter().all(|f| matches!(f, Some(v) if *v >= 0.85))
            && matches!(rule_f1, Some(r) if r < best);
        criteria.push(CriterionResult {
            id: 1,
            name: "clean baseline F1 >= 0.85 per architecture; rule monitor strictly below best ML".into(),
            pass,
            details: format!(
                "mean baseline F1: mlp {}, lstm {}; best ML {:.4}; rule {}",
                fmt(base_f1[0]),
                fmt(base_f1[1]),
                best,
                fmt(rule_f1)
            ),
        });
    }

    // 2: the semantic term does not cost clean performance.
    {
        let mut pass = true;
        let mut parts = Vec::new();
        for (i, &kind) in archs.iter().enumerate() {
            let b = data.mean_clean_f1(&baseline[i]);
            let c = data.mean_clean_f1(&custom[i]);
            let gap = match (b, c) {
                (Some(b), Some(c)) => Some((c - b).abs()),
                _ => None,
            };
            pass &= matches!(gap, Some(g) if g <= 0.05);
            parts.push(format!("{} |gap| {}", kind_slug(kind), fmt(gap)));
        }
        criteria.push(CriterionResult {
            id: 2,
            name: "clean F1 gap |custom - baseline| <= 0.05 per architecture".into(),
            pass,
            details: parts.join("; "),
        });
    }

    // 3: the white-box attack meaningfully moves the baselines.
    {
        let errs: Vec<Option<f64>> =
            baseline.iter().map(|g| data.mean_err(g, WB, 0.2)).collect();
        let pass = errs.iter().all(|e| matches!(e, Some(v) if *v >= 0.2));
        criteria.push(CriterionResult {
            id: 3,
            name: "baseline robustness error >= 0.2 under white-box FGSM at eps 0.2".into(),
            pass,
            details: format!("mlp {}, lstm {}", fmt(errs[0]), fmt(errs[1])),
        });
    }

    // 4: the semantic term buys white-box robustness.
    {
        let eps = [0.1, 0.2];
        let mut qualifies = [true, true];
        let mut guard = true;
        let mut parts = Vec::new();
        for (i, &kind) in archs.iter().enumerate() {
            for &e in &eps {
                let b = data.mean_err(&baseline[i], WB, e);
                let c = data.mean_err(&custom[i], WB, e);
                match (b, c) {
                    (Some(b), Some(c)) => {
                        qualifies[i] &= c <= 0.7 * b;
                        guard &= c <= b + 0.05;
                        parts.push(format!("{} eps {e}: base {b:.4} custom {c:.4}", kind_slug(kind)));
                    }
                    _ => {
                        qualifies[i] = false;
                        guard = false;
                        parts.push(format!("{} eps {e}: missing", kind_slug(kind)));
                    }
                }
            }
        }
        let pass = (qualifies[0] || qualifies[1]) && guard;
        criteria.push(CriterionResult {
            id: 4,
            name: "custom cuts mean white-box error >= 30% at eps {0.1, 0.2} for one architecture, never > 0.05 worse".into(),
            pass,
            details: parts.join("; "),
        });
    }

    // 5: the semantic term does not hurt under sensor noise.
    {
        let mut pass = true;
        let mut parts = Vec::new();
        for (i, &kind) in archs.iter().enumerate() {
            let b = data.mean_err(&baseline[i], GAUSS, 0.5);
            let c = data.mean_err(&custom[i], GAUSS, 0.5);
            pass &= matches!((b, c), (Some(b), Some(c)) if c <= b);
            parts.push(format!("{} base {} custom {}", kind_slug(kind), fmt(b), fmt(c)));
        }
        criteria.push(CriterionResult {
            id: 5,
            name: "custom robustness error <= baseline under Gaussian noise at sigma 0.5".into(),
            pass,
            details: parts.join("; "),
        });
    }

    // 6: query access is no stronger than gradient access.
    {
        let lstm_base = &baseline[1];
        let bb = data.mean_err(lstm_base, BB, 0.2);
        let wb = data.mean_err(lstm_base, WB, 0.2);
        let agreement = data.mean_agreement(lstm_base);
        let pass = matches!((bb, wb), (Some(bb), Some(wb)) if bb <= wb)
            && matches!(agreement, Some(a) if a >= 0.9);
        criteria.push(CriterionResult {
            id: 6,
            name: "baseline LSTM at eps 0.2: black-box error <= white-box, substitute agreement >= 0.9".into(),
            pass,
            details: format!(
                "black-box {}, white-box {}, agreement {}",
                fmt(bb),
                fmt(wb),
                fmt(agreement)
            ),
        });
    }

    Ok(AcceptanceSummary {
        all_pass: criteria.iter().all(|c| c.pass),
        note: "run-level criteria 1-6; criteria 7-11 (gradients, oracles, determinism, degeneracy) run in the acceptance test suite".into(),
        criteria,
    })
}
