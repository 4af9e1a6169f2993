//! Input perturbations for monitor robustness testing: Gaussian
//! sensor noise, white-box FGSM, and a black-box substitute-model
//! FGSM. All perturbations act in normalized feature space, so noise
//! scales and step budgets are unitless multiples of the per-channel
//! training standard deviation.
//!
//! Slope channels are perturbed directly, never recomputed from the
//! perturbed glucose channel: the attack targets the multivariate
//! input as the monitor sees it, and recomputation would correlate
//! channels the threat model treats as independent.

pub mod fgsm;
pub mod gaussian;
pub mod substitute;

#[cfg(test)]
pub(crate) mod testkit;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitors::dataset::ryu_like;
use crate::monitors::{Dataset, FeatureSpec, MonitorError, WindowSample, CHANNEL_NAMES, NUM_CHANNELS};

pub use fgsm::{fgsm_whitebox, FgsmSpec};
pub use gaussian::{gaussian_perturb, GaussianSpec};
pub use substitute::{fgsm_blackbox, BlackboxOutcome, SubstituteSpec};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("bad perturbation spec: {reason}")]
    BadSpec { reason: String },
    #[error("unknown channel name {name:?}")]
    UnknownChannel { name: String },
    #[error("monitor {monitor:?} exposes no input gradient")]
    GradientFree { monitor: String },
    #[error("query budget {budget} is below the {need} samples needed to train the substitute")]
    QueryBudget { budget: usize, need: usize },
    #[error("substitute training diverged at epoch {epoch}, step {step}")]
    SubstituteDiverged { epoch: usize, step: usize },
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("io error on {path}")]
    Io { path: String, source: std::io::Error },
    #[error("bad perturbed dataset at {path}: {reason}")]
    Format { path: String, reason: String },
}

/// The three perturbation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    Gaussian,
    FgsmWhitebox,
    FgsmBlackbox,
}

impl PerturbKind {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbKind::Gaussian => "gaussian",
            PerturbKind::FgsmWhitebox => "fgsm_whitebox",
            PerturbKind::FgsmBlackbox => "fgsm_blackbox",
        }
    }

    pub fn parse(s: &str) -> Option<PerturbKind> {
        match s {
            "gaussian" => Some(PerturbKind::Gaussian),
            "fgsm_whitebox" => Some(PerturbKind::FgsmWhitebox),
            "fgsm_blackbox" => Some(PerturbKind::FgsmBlackbox),
            _ => None,
        }
    }
}

/// A perturbed copy of one dataset split, tagged with what produced
/// it. `magnitude` is the noise scale for Gaussian batches and the
/// step budget epsilon for FGSM batches; `seed` is 0 for the white-box
/// attack, which is deterministic without one.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedBatch {
    pub kind: PerturbKind,
    pub magnitude: f64,
    pub seed: u64,
    pub samples: Vec<WindowSample>,
}

impl PerturbedBatch {
    /// Clean split columns first, provenance columns appended, so the
    /// feature block stays position-compatible with clean CSVs.
    pub fn csv_header(spec: &FeatureSpec) -> String {
        let mut h = Dataset::split_csv_header(spec);
        h.push_str(",perturbation_kind,magnitude,seed");
        h
    }

    pub fn to_csv(&self, spec: &FeatureSpec) -> String {
        let mut out = Self::csv_header(spec);
        out.push('\n');
        for s in &self.samples {
            let _ = write!(out, "{},{},{},{}", s.trace_id, s.t, s.label, s.indicator);
            for v in &s.features {
                let mut buf = ryu_like(*v);
                buf.insert(0, ',');
                out.push_str(&buf);
            }
            let _ = write!(out, ",{},{},{}", self.kind.name(), ryu_like(self.magnitude), self.seed);
            out.push('\n');
        }
        out
    }

    pub(crate) fn from_csv(spec: &FeatureSpec, csv: &str) -> Result<PerturbedBatch, String> {
        let mut lines = csv.lines();
        let header = lines.next().ok_or("empty csv")?;
        if header != Self::csv_header(spec) {
            return Err(format!("unexpected header: {header}"));
        }
        let width = spec.flat_width();
        let mut tag: Option<(PerturbKind, f64, u64)> = None;
        let mut samples = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width + 7 {
                return Err(format!("line {}: {} fields, expected {}", ln + 2, fields.len(), width + 7));
            }
            let parse_err = |what: &str| format!("line {}: bad {what}", ln + 2);
            let t: u32 = fields[1].parse().map_err(|_| parse_err("t"))?;
            let label: u8 = fields[2].parse().map_err(|_| parse_err("label"))?;
            let indicator: u8 = fields[3].parse().map_err(|_| parse_err("indicator"))?;
            let features: Vec<f64> = fields[4..4 + width]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err("feature")))
                .collect::<Result<_, _>>()?;
            let kind = PerturbKind::parse(fields[4 + width]).ok_or_else(|| parse_err("perturbation_kind"))?;
            let magnitude: f64 = fields[5 + width].parse().map_err(|_| parse_err("magnitude"))?;
            let seed: u64 = fields[6 + width].parse().map_err(|_| parse_err("seed"))?;
            match tag {
                None => tag = Some((kind, magnitude, seed)),
                Some(t) if t != (kind, magnitude, seed) => {
                    return Err(format!("line {}: mixed perturbation tags in one file", ln + 2));
                }
                Some(_) => {}
            }
            samples.push(WindowSample { trace_id: fields[0].to_string(), t, label, indicator, features });
        }
        let (kind, magnitude, seed) = tag.ok_or("no data rows")?;
        Ok(PerturbedBatch { kind, magnitude, seed, samples })
    }

    pub fn save(&self, spec: &FeatureSpec, path: &Path) -> Result<(), PerturbError> {
        std::fs::write(path, self.to_csv(spec)).map_err(|e| PerturbError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(spec: &FeatureSpec, path: &Path) -> Result<PerturbedBatch, PerturbError> {
        let text = std::fs::read_to_string(path).map_err(|e| PerturbError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_csv(spec, &text).map_err(|reason| PerturbError::Format {
            path: path.display().to_string(),
            reason,
        })
    }
}

/// Resolves channel names to a per-channel attack mask. Every name
/// must be one of `CHANNEL_NAMES`, and at least one is required: an
/// empty target list would silently turn the perturbation into a
/// no-op, which is always a configuration mistake.
pub(crate) fn channel_mask(names: &[String]) -> Result<[bool; NUM_CHANNELS], PerturbError> {
    if names.is_empty() {
        return Err(PerturbError::BadSpec { reason: "no target channels".into() });
    }
    let mut mask = [false; NUM_CHANNELS];
    for name in names {
        let idx = CHANNEL_NAMES
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| PerturbError::UnknownChannel { name: name.clone() })?;
        mask[idx] = true;
    }
    Ok(mask)
}
