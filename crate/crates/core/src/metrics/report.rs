//! Report emission: the JSON report array plus per-perturbation CSV
//! matrices suitable for plotting. Emission is deterministic, so two
//! runs over identical reports produce byte-identical files.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use crate::monitors::dataset::ryu_like;

use super::robustness::RobustnessReport;
use super::MetricsError;

/// Writes `reports.json` (the full report array) and, per perturbation
/// kind, `matrix_{kind}_robustness_error.csv` and
/// `matrix_{kind}_perturbed_f1.csv`. Matrix rows are models in first
/// appearance order, columns are magnitudes ascending; every cell must
/// be present exactly once. Returns the written paths.
pub fn emit_report(reports: &[RobustnessReport], dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyReports);
    }

    let write = |path: PathBuf, body: String| -> Result<PathBuf, MetricsError> {
        std::fs::write(&path, body).map_err(|e| MetricsError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(path)
    };

    let mut paths = Vec::new();
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    paths.push(write(dir.join("reports.json"), json + "\n")?);

    let mut kinds: Vec<&str> = Vec::new();
    for r in reports {
        if !kinds.contains(&r.perturbation.kind.as_str()) {
            kinds.push(&r.perturbation.kind);
        }
    }

    for kind in kinds {
        let subset: Vec<&RobustnessReport> =
            reports.iter().filter(|r| r.perturbation.kind == kind).collect();

        let mut models: Vec<&str> = Vec::new();
        let mut magnitudes: Vec<f64> = Vec::new();
        let mut cells: HashMap<(String, u64), &RobustnessReport> = HashMap::new();
        let mut seen_mag: HashSet<u64> = HashSet::new();
        for r in &subset {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
            let bits = r.perturbation.magnitude.to_bits();
            if seen_mag.insert(bits) {
                magnitudes.push(r.perturbation.magnitude);
            }
            if cells.insert((r.model.clone(), bits), r).is_some() {
                return Err(MetricsError::DuplicateCell {
                    model: r.model.clone(),
                    kind: kind.to_string(),
                    magnitude: r.perturbation.magnitude,
                });
            }
        }
        magnitudes.sort_by(f64::total_cmp);

        for (metric, value) in [
            ("robustness_error", &(|r: &RobustnessReport| r.robustness_error) as &dyn Fn(&RobustnessReport) -> f64),
            ("perturbed_f1", &|r: &RobustnessReport| r.perturbed.f1),
        ] {
            let mut csv = String::from("model");
            for m in &magnitudes {
                csv.push(',');
                csv.push_str(&ryu_like(*m));
            }
            csv.push('\n');
            for model in &models {
                csv.push_str(model);
                for m in &magnitudes {
                    let r = cells.get(&(model.to_string(), m.to_bits())).ok_or_else(|| {
                        MetricsError::MissingCell {
                            model: model.to_string(),
                            kind: kind.to_string(),
                            magnitude: *m,
                        }
                    })?;
                    csv.push(',');
                    csv.push_str(&ryu_like(value(r)));
                }
                csv.push('\n');
            }
            paths.push(write(dir.join(format!("matrix_{kind}_{metric}.csv")), csv)?);
        }
    }

    Ok(paths)
}
