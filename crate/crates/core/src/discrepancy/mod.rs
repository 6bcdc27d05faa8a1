//! Gradient-free kernel Stein discrepancy of weighted particle measures.
//!
//! For a target `p` (possibly unnormalized), an auxiliary density `q` with a
//! score, and `π = Σ w_i δ(x_i)`,
//!
//! ```text
//! D_{p,q}(π)² = Σ_i Σ_j w_i w_j (q/p)(x_i) (q/p)(x_j) k_q(x_i, x_j)
//! ```
//!
//! Ratios are only ever formed as `exp(log q − log p)`.

mod measure;
mod qmc;
mod standardize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{log_density_ratio, Density};
use crate::error::{check_dim, Error, Result};
use crate::kernel::ImqKernel;
use crate::numeric::CompensatedSum;

pub use measure::ParticleMeasure;
pub use qmc::{halton_normal_points, invert_cdf, qmc_particles_1d};
pub use standardize::{standardize, StandardizedDensity, Standardization};

/// Squared discrepancy with diagnostics on the log-ratios encountered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfksdResult {
    pub value: f64,
    pub value_squared: f64,
    pub n: usize,
    pub max_log_ratio: f64,
    pub min_log_ratio: f64,
}

impl GfksdResult {
    fn from_raw(raw: f64, abs_scale: f64, n: usize, log_ratios: &[f64]) -> Result<Self> {
        if !raw.is_finite() {
            return Err(Error::Numeric(format!("non-finite discrepancy {raw}")));
        }
        let value_squared = if raw < 0.0 {
            if raw >= -1e-10 * abs_scale {
                0.0
            } else {
                return Err(Error::Consistency(format!(
                    "squared discrepancy {raw:.3e} is negative beyond tolerance (scale {abs_scale:.3e})"
                )));
            }
        } else {
            raw
        };
        Ok(Self {
            value: value_squared.sqrt(),
            value_squared,
            n,
            max_log_ratio: log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min_log_ratio: log_ratios.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }
}

/// Log-ratios `log q(x_i) − log p(x_i)`, failing on the first non-finite one.
pub fn log_ratios(p: &dyn Density, q: &dyn Density, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            let v = log_density_ratio(q, p, x)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteRatio { index, value: v });
            }
            Ok(v)
        })
        .collect()
}

/// Scores `∇ log q(x_i)` at every point.
pub fn scores(q: &dyn Density, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if !q.has_score() {
        return Err(Error::Unsupported("discrepancy needs a density q with a score".into()));
    }
    points.iter().map(|x| q.score(x)).collect()
}

/// `Σ_i Σ_j c_i c_j k_q(x_i, x_j)` and `Σ_i Σ_j |c_i c_j k_q(x_i, x_j)|`.
///
/// Rows are evaluated in parallel, each with a compensated sum in column
/// order; the row sums are then combined sequentially in row order, so the
/// result is identical for any thread count.
pub fn stein_quadratic_form(
    kernel: &ImqKernel,
    points: &[Vec<f64>],
    scores: &[Vec<f64>],
    coeffs: &[f64],
) -> (f64, f64) {
    let n = points.len();
    let rows: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = CompensatedSum::new();
            let mut a = 0.0;
            if coeffs[i] != 0.0 {
                for j in 0..n {
                    if coeffs[j] == 0.0 {
                        continue;
                    }
                    let k = kernel.stein_kernel_unchecked(&points[i], &points[j], &scores[i], &scores[j]).value;
                    let t = coeffs[i] * coeffs[j] * k;
                    s.add(t);
                    a += t.abs();
                }
            }
            (s.value(), a)
        })
        .collect();
    let mut total = CompensatedSum::new();
    let mut abs = 0.0;
    for (s, a) in rows {
        total.add(s);
        abs += a;
    }
    (total.value(), abs)
}

fn check_inputs(p: &dyn Density, q: &dyn Density, pi: &ParticleMeasure) -> Result<()> {
    check_dim(q.dim(), p.dim())?;
    check_dim(q.dim(), pi.dim())?;
    Ok(())
}

/// `D_{p,q}(π)²`, clamped at zero when rounding makes it slightly negative.
pub fn gfksd_squared(p: &dyn Density, q: &dyn Density, kernel: &ImqKernel, pi: &ParticleMeasure) -> Result<GfksdResult> {
    check_inputs(p, q, pi)?;
    let lr = log_ratios(p, q, pi.points())?;
    let sc = scores(q, pi.points())?;
    let coeffs: Vec<f64> = pi.weights().iter().zip(&lr).map(|(w, l)| w * l.exp()).collect();
    let (raw, abs) = stein_quadratic_form(kernel, pi.points(), &sc, &coeffs);
    GfksdResult::from_raw(raw, abs, pi.len(), &lr)
}

/// Canonical kernel Stein discrepancy `D_{q,q}(π)²` (all ratios equal one).
pub fn ksd_squared(q: &dyn Density, kernel: &ImqKernel, pi: &ParticleMeasure) -> Result<GfksdResult> {
    check_dim(q.dim(), pi.dim())?;
    let sc = scores(q, pi.points())?;
    let (raw, abs) = stein_quadratic_form(kernel, pi.points(), &sc, pi.weights());
    GfksdResult::from_raw(raw, abs, pi.len(), &vec![0.0; pi.len()])
}

/// `D_{p,q}(π)²` computed as `Z² D_{q,q}(π̄)²`, where `Z = Σ w_i (q/p)(x_i)`
/// and `π̄` reweights `π` by `(q/p)/Z`.
pub fn gfksd_via_reparam(p: &dyn Density, q: &dyn Density, kernel: &ImqKernel, pi: &ParticleMeasure) -> Result<GfksdResult> {
    check_inputs(p, q, pi)?;
    let lr = log_ratios(p, q, pi.points())?;
    let unnorm: Vec<f64> = pi.weights().iter().zip(&lr).map(|(w, l)| w * l.exp()).collect();
    let z: f64 = unnorm.iter().copied().collect::<CompensatedSum>().value();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Degenerate(format!("reweighting constant Z = {z}")));
    }
    let bar_weights: Vec<f64> = unnorm.iter().map(|u| u / z).collect();
    let pi_bar = ParticleMeasure::new(pi.points().to_vec(), bar_weights)?;
    let canonical = ksd_squared(q, kernel, &pi_bar)?;
    let raw = z * z * canonical.value_squared;
    GfksdResult::from_raw(raw, raw.abs(), pi.len(), &lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{CustomDensity, GaussianDensity};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_particle_equal_models() {
        let g = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let pi = ParticleMeasure::dirac(vec![0.0]);
        let r = gfksd_squared(&g, &g, &ImqKernel::default(), &pi).unwrap();
        assert_abs_diff_eq!(r.value_squared, 1.0, epsilon = 1e-15);
        assert_eq!(r.n, 1);
    }

    #[test]
    fn single_particle_ratio_two() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = GaussianDensity::univariate(0.0, 4.0).unwrap();
        let pi = ParticleMeasure::dirac(vec![0.0]);
        let r = gfksd_squared(&p, &q, &ImqKernel::default(), &pi).unwrap();
        assert_abs_diff_eq!(r.value_squared, 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(r.max_log_ratio, std::f64::consts::LN_2, epsilon = 1e-14);
    }

    #[test]
    fn reparam_dirac() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = GaussianDensity::univariate(0.5, 2.0).unwrap();
        let k = ImqKernel::default();
        let x0 = 1.3;
        let pi = ParticleMeasure::dirac(vec![x0]);
        let z = (q.log_density(&[x0]) - p.log_density(&[x0])).exp();
        let s = q.score(&[x0]).unwrap();
        let r = gfksd_via_reparam(&p, &q, &k, &pi).unwrap();
        assert_abs_diff_eq!(r.value_squared, z * z * k.stein_diagonal(1, &s), epsilon = 1e-12);
    }

    #[test]
    fn reparam_equal_models_is_identical() {
        let g = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let pi = ParticleMeasure::uniform(vec![vec![-0.3], vec![0.2], vec![1.5]]).unwrap();
        let k = ImqKernel::default();
        let a = gfksd_squared(&g, &g, &k, &pi).unwrap();
        let b = gfksd_via_reparam(&g, &g, &k, &pi).unwrap();
        assert_abs_diff_eq!(a.value_squared, b.value_squared, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_ratio_names_index() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = CustomDensity::new(1, |x| if x[0] > 1.0 { f64::NEG_INFINITY } else { 0.0 });
        let pi = ParticleMeasure::uniform(vec![vec![0.0], vec![0.5], vec![2.0]]).unwrap();
        match gfksd_squared(&p, &q, &ImqKernel::default(), &pi) {
            Err(Error::NonFiniteRatio { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn q_without_score_is_rejected() {
        let q = CustomDensity::new(1, |x| -x[0] * x[0]);
        let p = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let pi = ParticleMeasure::dirac(vec![0.0]);
        assert!(matches!(
            gfksd_squared(&p, &q, &ImqKernel::default(), &pi),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn normalization_constant_cancels_exactly_enough() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = GaussianDensity::univariate(0.2, 1.5).unwrap();
        let pi = ParticleMeasure::uniform(vec![vec![-0.3], vec![0.2], vec![1.5]]).unwrap();
        let k = ImqKernel::default();
        let base = gfksd_squared(&p, &q, &k, &pi).unwrap().value_squared;
        // log p + c scales every ratio by e^{-c}, so D² scales by e^{-2c}
        let c = 3.0;
        let p2 = {
            let p = p.clone();
            CustomDensity::new(1, move |x| p.log_density(x) + c)
        };
        let shifted = gfksd_squared(&p2, &q, &k, &pi).unwrap().value_squared;
        assert!((shifted * (2.0 * c).exp() - base).abs() <= 1e-12 * base);
    }

    #[test]
    fn result_serializes_with_expected_fields() {
        let r = GfksdResult { value: 2.0, value_squared: 4.0, n: 1, max_log_ratio: 0.5, min_log_ratio: 0.5 };
        let v: serde_json::Value = serde_json::to_value(r).unwrap();
        for key in ["value", "value_squared", "n", "max_log_ratio", "min_log_ratio"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
