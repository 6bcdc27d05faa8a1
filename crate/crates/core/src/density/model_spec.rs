use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{fit_kde, DensityRef, GaussianDensity, KdeDensity, MixtureDensity, StudentTDensity};
use crate::error::{Error, Result};

/// JSON description of a density model, tagged by `"kind"`.
///
/// ```json
/// {"kind": "gaussian", "mean": [0.0], "cov": [[1.0]]}
/// {"kind": "mixture", "components": [{"weight": 0.5, "model": {...}}, ...]}
/// {"kind": "kde", "samples_csv": "draws.csv"}
/// {"kind": "student_t", "df": 10, "loc": 0.0, "scale": 0.5}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gaussian {
        mean: Vec<f64>,
        /// Full covariance, row-major. Mutually exclusive with `variance`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cov: Option<Vec<Vec<f64>>>,
        /// Isotropic variance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
    },
    Mixture {
        components: Vec<MixtureComponentSpec>,
    },
    Kde {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        samples_csv: Option<PathBuf>,
        /// Per-dimension bandwidth; Silverman's rule when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<Vec<f64>>,
    },
    StudentT {
        df: f64,
        loc: f64,
        scale: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MixtureComponentSpec {
    pub weight: f64,
    pub model: ModelSpec,
}

impl ModelSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad model description: {e}")))
    }

    /// Reads a model file; relative `samples_csv` paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut spec = Self::from_json_str(&text)?;
        if let Some(dir) = path.parent() {
            spec.resolve_paths(dir);
        }
        Ok(spec)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        match self {
            ModelSpec::Kde { samples_csv: Some(p), .. } if p.is_relative() => *p = dir.join(&*p),
            ModelSpec::Mixture { components } => {
                for c in components {
                    c.model.resolve_paths(dir);
                }
            }
            _ => {}
        }
    }

    pub fn build(&self) -> Result<DensityRef> {
        Ok(match self {
            ModelSpec::Gaussian { mean, cov, variance } => {
                let g = match (cov, variance) {
                    (Some(rows), None) => {
                        let d = mean.len();
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(Error::Config(format!("gaussian cov must be {d}x{d}")));
                        }
                        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                        GaussianDensity::new(mean.clone(), DMatrix::from_row_slice(d, d, &flat))?
                    }
                    (None, Some(v)) => GaussianDensity::isotropic(mean.clone(), *v)?,
                    _ => {
                        return Err(Error::Config(
                            "gaussian needs exactly one of `cov` or `variance`".into(),
                        ))
                    }
                };
                Arc::new(g)
            }
            ModelSpec::Mixture { components } => {
                let comps = components
                    .iter()
                    .map(|c| Ok((c.weight, c.model.build()?)))
                    .collect::<Result<Vec<_>>>()?;
                Arc::new(MixtureDensity::new(comps)?)
            }
            ModelSpec::Kde { samples, samples_csv, bandwidth } => {
                let pts = match (samples, samples_csv) {
                    (Some(s), None) => s.clone(),
                    (None, Some(path)) => load_samples_csv(path)?,
                    _ => {
                        return Err(Error::Config(
                            "kde needs exactly one of `samples` or `samples_csv`".into(),
                        ))
                    }
                };
                match bandwidth {
                    Some(h) => Arc::new(KdeDensity::new(pts, h.clone())?),
                    None => Arc::new(fit_kde(&pts)?),
                }
            }
            ModelSpec::StudentT { df, loc, scale } => Arc::new(StudentTDensity::new(*df, *loc, *scale)?),
        })
    }
}

/// Loads points from a headerless CSV, one row per point.
pub fn load_samples_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = out.first() {
            if first.len() != row.len() {
                return Err(Error::Config(format!(
                    "{}:{}: expected {} columns, got {}",
                    path.display(),
                    line + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        out.push(row);
    }
    Ok(out)
}
