//! Evaluable (possibly unnormalized) densities and the surrogate
//! constructions used to pick `q`: prior, Laplace, Gaussian mixture and KDE.
//!
//! Every model implements [`Density`]. Models are immutable after
//! construction and safe to evaluate from many threads at once.

mod gaussian;
mod gmm;
mod kde;
mod laplace;
mod mixture;
mod model_spec;
mod student_t;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

use crate::error::{check_dim, Error, Result};

pub use gaussian::GaussianDensity;
pub use gmm::{fit_gmm, GmmFit, GmmOptions};
pub use kde::{fit_kde, silverman_bandwidth, KdeDensity};
pub use laplace::{fit_laplace, LaplaceApprox, LaplaceOptimizer, LaplaceOptions};
pub use mixture::MixtureDensity;
pub use model_spec::{load_samples_csv, ModelSpec};
pub use student_t::StudentTDensity;

/// Coarse classification of a density model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Gaussian,
    Mixture,
    Kde,
    Custom,
}

/// A log-density on `R^d`, optionally with its score `∇ log density`.
///
/// `log_density` may be unnormalized and may return `-inf` where the density
/// vanishes. Sampling and the 1D CDF are optional capabilities.
pub trait Density: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn kind(&self) -> DensityKind;

    fn log_density(&self, x: &[f64]) -> f64;

    fn has_score(&self) -> bool {
        false
    }

    fn score(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Unsupported(format!(
            "{:?} density has no analytic score",
            self.kind()
        )))
    }

    /// Whether `log_density` includes the normalizing constant.
    fn is_normalized(&self) -> bool {
        false
    }

    fn sample(&self, _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Err(Error::Unsupported(format!(
            "{:?} density does not support sampling",
            self.kind()
        )))
    }

    /// Mean and covariance, when known in closed form.
    fn moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        None
    }

    /// Cumulative distribution function, 1D models only.
    fn cdf(&self, _x: f64) -> Result<f64> {
        Err(Error::Unsupported(format!(
            "{:?} density has no CDF",
            self.kind()
        )))
    }
}

/// Shared handle to a density model.
pub type DensityRef = Arc<dyn Density>;

/// `log q(x) - log p(x)`.
///
/// The result is `+inf` when `p(x) = 0 < q(x)`; the caller decides whether
/// that is an error. NaN (both densities zero) is returned as-is.
pub fn log_density_ratio(q: &dyn Density, p: &dyn Density, x: &[f64]) -> Result<f64> {
    check_dim(q.dim(), p.dim())?;
    check_dim(q.dim(), x.len())?;
    Ok(q.log_density(x) - p.log_density(x))
}

/// `∇ log model(x)`, with a dimension check.
pub fn score(model: &dyn Density, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.len())?;
    model.score(x)
}

/// Central finite-difference gradient of `log_density`, step `h·(1+|x_i|)`.
pub fn fd_score(model: &dyn Density, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let step = h * (1.0 + x[i].abs());
            xp[i] = x[i] + step;
            let up = model.log_density(&xp);
            xp[i] = x[i] - step;
            let down = model.log_density(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Score if available analytically, otherwise a finite-difference gradient.
pub fn score_or_fd(model: &dyn Density, x: &[f64]) -> Vec<f64> {
    if model.has_score() {
        if let Ok(s) = model.score(x) {
            return s;
        }
    }
    fd_score(model, x, 1e-5)
}

type LogDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ScoreFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A density defined by user-supplied closures.
#[derive(Clone)]
pub struct CustomDensity {
    dim: usize,
    normalized: bool,
    log_density: Arc<LogDensityFn>,
    score: Option<Arc<ScoreFn>>,
}

impl CustomDensity {
    pub fn new<F>(dim: usize, log_density: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            normalized: false,
            log_density: Arc::new(log_density),
            score: None,
        }
    }

    pub fn with_score<G>(mut self, score: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.score = Some(Arc::new(score));
        self
    }

    pub fn normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("dim", &self.dim)
            .field("normalized", &self.normalized)
            .field("has_score", &self.score.is_some())
            .finish()
    }
}

impl Density for CustomDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Custom
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    fn has_score(&self) -> bool {
        self.score.is_some()
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.score {
            Some(s) => Ok(s(x)),
            None => Err(Error::Unsupported("custom density has no registered score".into())),
        }
    }

    fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Numerically stable `log Σ exp(v_i)`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ratio_identical_models_is_zero() {
        let g = GaussianDensity::univariate(0.0, 1.0).unwrap();
        assert_eq!(log_density_ratio(&g, &g, &[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn ratio_against_wider_gaussian() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = GaussianDensity::univariate(0.0, 4.0).unwrap();
        assert_abs_diff_eq!(
            log_density_ratio(&q, &p, &[0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            log_density_ratio(&q, &p, &[2.0]).unwrap(),
            std::f64::consts::LN_2 - 2.0 + 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ratio_dimension_mismatch() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            log_density_ratio(&q, &p, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ratio_infinite_when_p_vanishes() {
        let q = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let p = CustomDensity::new(1, |x| if x[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY });
        assert_eq!(log_density_ratio(&q, &p, &[-1.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn custom_without_score_is_unsupported() {
        let c = CustomDensity::new(1, |x| -x[0] * x[0]);
        assert!(matches!(score(&c, &[1.0]), Err(Error::Unsupported(_))));
        let s = score_or_fd(&c, &[1.0]);
        assert_abs_diff_eq!(s[0], -2.0, epsilon = 1e-8);
    }

    #[test]
    fn log_sum_exp_handles_tiny_values() {
        let v = [-700.0, -701.0, -750.0];
        let direct = (v.iter().map(|x: &f64| x.exp()).sum::<f64>()).ln();
        assert_abs_diff_eq!(log_sum_exp(&v), direct, epsilon = 1e-10);
        let w = [-1000.0, -1000.0];
        assert_abs_diff_eq!(log_sum_exp(&w), -1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
