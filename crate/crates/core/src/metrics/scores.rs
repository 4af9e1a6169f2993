//! Confusion counts and the precision/recall family derived from them.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(a: ConfusionCounts, b: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: a.tp + b.tp,
            fp: a.fp + b.fp,
            tn: a.tn + b.tn,
            fn_: a.fn_ + b.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub acc: f64,
    pub f1: f64,
}

/// Ratios with the 0/0 -> 0 convention so empty classes score zero
/// rather than poisoning downstream aggregates with NaN.
pub fn prf_scores(c: &ConfusionCounts) -> Scores {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let acc = ratio(c.tp + c.tn, c.total());
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Scores { precision, recall, acc, f1 }
}

/// Counts and derived scores together, in the order reports emit them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBlock {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub acc: f64,
    pub f1: f64,
}

impl ScoredBlock {
    pub fn from_counts(c: &ConfusionCounts) -> ScoredBlock {
        let s = prf_scores(c);
        ScoredBlock {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: s.precision,
            recall: s.recall,
            acc: s.acc,
            f1: s.f1,
        }
    }

    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts { tp: self.tp, fp: self.fp, tn: self.tn, fn_: self.fn_ }
    }
}
