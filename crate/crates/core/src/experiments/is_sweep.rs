use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::report::{config_hash, ReportMetadata};
use crate::density::{DensityRef, GaussianDensity};
use crate::discrepancy::{scores, ParticleMeasure};
use crate::error::Result;
use crate::kernel::{stein_matrix, ImqKernel};
use crate::sampling::{draw_samples, optimal_stein_weights, stein_reweight, EnergyReference, QpOptions, SisOptions};

/// How `q` departs from `p = 𝒩(0, I)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepRegime {
    /// `q = 𝒩(0, λI)`.
    Scale,
    /// `q = 𝒩(c·1, I)`.
    Shift,
}

impl SweepRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepRegime::Scale => "scale",
            SweepRegime::Shift => "shift",
        }
    }

    fn surrogate(&self, d: usize, value: f64) -> Result<GaussianDensity> {
        match self {
            SweepRegime::Scale => GaussianDensity::isotropic(vec![0.0; d], value),
            SweepRegime::Shift => GaussianDensity::isotropic(vec![value; d], 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IsSweepOptions {
    pub scales: Vec<f64>,
    pub shifts: Vec<f64>,
    pub dims: Vec<usize>,
    pub ns: Vec<usize>,
    /// Independent repetitions per cell.
    pub reps: usize,
    /// Exact draws from `p` used as the energy-distance reference.
    pub reference_size: usize,
    pub seed: u64,
}

impl Default for IsSweepOptions {
    fn default() -> Self {
        Self {
            scales: vec![0.7, 1.0, 1.3],
            shifts: vec![-0.6, 0.0, 0.6],
            dims: vec![1, 4],
            ns: vec![25, 100],
            reps: 10,
            reference_size: 1000,
            seed: 0,
        }
    }
}

/// Mean and standard error of `ln ED` for one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsSweepRow {
    pub regime: String,
    pub parameter: f64,
    pub d: usize,
    pub n: usize,
    /// `gfksd`, `ksd` (score of `p`) or `snis`.
    pub method: String,
    pub mean_log_energy: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsSweepReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<IsSweepRow>,
}

impl IsSweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        std::fs::write(dir.join(format!("{stem}.json")), meta + "\n")?;
        Ok(())
    }

    pub fn get(&self, regime: SweepRegime, parameter: f64, d: usize, n: usize, method: &str) -> Option<&IsSweepRow> {
        self.rows.iter().find(|r| {
            r.regime == regime.as_str() && r.parameter == parameter && r.d == d && r.n == n && r.method == method
        })
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Compares gradient-free Stein, score-based Stein and self-normalized
/// importance weights for Gaussian surrogates of a standard Gaussian target,
/// scored by energy distance to exact draws.
pub fn run_is_sweep(kernel: &ImqKernel, opts: &IsSweepOptions) -> Result<IsSweepReport> {
    #[derive(Serialize)]
    struct Hashed<'a> {
        experiment: &'a str,
        sigma: f64,
        beta: f64,
        options: &'a IsSweepOptions,
    }
    let metadata = ReportMetadata {
        experiment: "is_sweep".into(),
        seed: opts.seed,
        config_hash: config_hash(&Hashed { experiment: "is_sweep", sigma: kernel.sigma(), beta: kernel.beta(), options: opts })?,
    };
    let mut rows = Vec::new();
    let sis = SisOptions { qp: QpOptions::default(), standardize: None };
    for &d in &opts.dims {
        let p = GaussianDensity::isotropic(vec![0.0; d], 1.0)?;
        let exact = draw_samples(&p, opts.reference_size, opts.seed.wrapping_add(1 << 32))?;
        let reference = EnergyReference::new(ParticleMeasure::uniform(exact)?);
        let cells = opts
            .scales
            .iter()
            .map(|v| (SweepRegime::Scale, *v))
            .chain(opts.shifts.iter().map(|v| (SweepRegime::Shift, *v)));
        for (regime, value) in cells {
            let q: DensityRef = Arc::new(regime.surrogate(d, value)?);
            for &n in &opts.ns {
                let mut logs: [Vec<f64>; 3] = Default::default();
                for rep in 0..opts.reps {
                    let pts = draw_samples(q.as_ref(), n, opts.seed.wrapping_add(rep as u64))?;
                    let c = stein_reweight(&p, &q, kernel, pts.clone(), Some(&reference), &sis)?;
                    let k = stein_matrix(kernel, &pts, &scores(&p, &pts)?)?;
                    let w = optimal_stein_weights(&k, &vec![1.0; n], &sis.qp)?.weights;
                    let ksd = reference.distance(&ParticleMeasure::new(pts, w)?)?;
                    let eds = [c.energy_distance_stein.unwrap_or(f64::NAN), ksd, c.energy_distance_snis.unwrap_or(f64::NAN)];
                    for (acc, ed) in logs.iter_mut().zip(eds) {
                        acc.push(ed.max(f64::MIN_POSITIVE).ln());
                    }
                }
                for (method, v) in ["gfksd", "ksd", "snis"].into_iter().zip(&logs) {
                    let (mean_log_energy, std_error) = mean_se(v);
                    rows.push(IsSweepRow {
                        regime: regime.as_str().into(),
                        parameter: value,
                        d,
                        n,
                        method: method.into(),
                        mean_log_energy,
                        std_error,
                    });
                }
            }
        }
    }
    Ok(IsSweepReport { metadata, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_surrogate_makes_the_two_stein_methods_agree() {
        let opts = IsSweepOptions {
            scales: vec![1.0],
            shifts: vec![],
            dims: vec![1],
            ns: vec![20],
            reps: 3,
            reference_size: 200,
            seed: 1,
        };
        let r = run_is_sweep(&ImqKernel::default(), &opts).unwrap();
        assert_eq!(r.rows.len(), 3);
        let g = r.get(SweepRegime::Scale, 1.0, 1, 20, "gfksd").unwrap();
        let k = r.get(SweepRegime::Scale, 1.0, 1, 20, "ksd").unwrap();
        assert!((g.mean_log_energy - k.mean_log_energy).abs() < 1e-6);
    }
}
