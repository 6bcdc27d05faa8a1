use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{log_sum_exp, Density, DensityKind, DensityRef, GaussianDensity, StudentTDensity};
use crate::error::{check_dim, Error, Result};

/// Finite mixture `Σ w_k p_k(x)` with weights on the simplex.
#[derive(Debug, Clone)]
pub struct MixtureDensity {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<DensityRef>,
    dim: usize,
}

impl MixtureDensity {
    pub fn new(components: Vec<(f64, DensityRef)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        let dim = components[0].1.dim();
        for (w, c) in &components {
            check_dim(dim, c.dim())?;
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid mixture weight {w}")));
            }
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let (weights, components): (Vec<f64>, Vec<DensityRef>) = components.into_iter().unzip();
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            components,
            dim,
        })
    }

    /// Mixture of univariate normals given by weights, means and variances.
    pub fn univariate_gaussian(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        check_dim(weights.len(), means.len())?;
        check_dim(weights.len(), variances.len())?;
        let comps = weights
            .iter()
            .zip(means.iter().zip(variances))
            .map(|(&w, (&m, &v))| Ok((w, Arc::new(GaussianDensity::univariate(m, v)?) as DensityRef)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    /// Mixture of univariate Student-t distributions sharing `df`.
    pub fn univariate_student_t(weights: &[f64], df: f64, locs: &[f64], scales: &[f64]) -> Result<Self> {
        check_dim(weights.len(), locs.len())?;
        check_dim(weights.len(), scales.len())?;
        let comps = weights
            .iter()
            .zip(locs.iter().zip(scales))
            .map(|(&w, (&m, &s))| Ok((w, Arc::new(StudentTDensity::new(df, m, s)?) as DensityRef)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DensityRef] {
        &self.components
    }

    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| lw + c.log_density(x))
            .collect()
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_log_terms(x);
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }
}

impl Density for MixtureDensity {
    /// Law of total covariance over the components.
    fn moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let parts = self
            .components
            .iter()
            .map(|c| c.moments())
            .collect::<Option<Vec<_>>>()?;
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (w, (m, _)) in self.weights.iter().zip(&parts) {
            for k in 0..d {
                mean[k] += w * m[k];
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for (w, (m, c)) in self.weights.iter().zip(&parts) {
            let dm = DVector::from_fn(d, |k, _| m[k] - mean[k]);
            cov += (c + &dm * dm.transpose()) * *w;
        }
        Some((mean, cov))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Mixture
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.component_log_terms(x))
    }

    fn has_score(&self) -> bool {
        self.components.iter().all(|c| c.has_score())
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let resp = self.responsibilities(x);
        let mut out = vec![0.0; self.dim];
        for (r, c) in resp.iter().zip(&self.components) {
            if *r == 0.0 {
                continue;
            }
            for (o, s) in out.iter_mut().zip(c.score(x)?) {
                *o += r * s;
            }
        }
        Ok(out)
    }

    fn is_normalized(&self) -> bool {
        self.components.iter().all(|c| c.is_normalized())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = k;
                break;
            }
        }
        self.components[idx].sample(rng)
    }

    fn cdf(&self, x: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc += w * c.cdf(x)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn symmetric_mixture_score_vanishes_at_center() {
        let m = MixtureDensity::univariate_gaussian(&[0.5, 0.5], &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.score(&[0.0]).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(MixtureDensity::univariate_gaussian(&[0.5, 0.6], &[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(MixtureDensity::univariate_gaussian(&[-0.5, 1.5], &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn log_density_far_in_tail_is_finite() {
        // component log-densities near -700 and below must not underflow to -inf
        let m = MixtureDensity::univariate_gaussian(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let x = 37.5; // log N(37.5; 0, 1) ≈ -704
        let v = m.log_density(&[x]);
        assert!(v.is_finite());
        let direct = log_sum_exp(&[
            0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - x * x / 2.0,
            0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - (x - 1.0) * (x - 1.0) / 2.0,
        ]);
        assert_abs_diff_eq!(v, direct, epsilon = 1e-9);
        assert!(m.score(&[x]).unwrap()[0].is_finite());
    }

    #[test]
    fn cdf_is_weighted_component_cdf() {
        let m = MixtureDensity::univariate_gaussian(&[0.25, 0.75], &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(m.cdf(0.0).unwrap(), 0.25 * 0.841_344_746_068_542_9 + 0.75 * 0.158_655_253_931_457_05, epsilon = 1e-10);
    }

    #[test]
    fn moments_by_total_covariance() {
        let m = MixtureDensity::univariate_gaussian(&[0.5, 0.5], &[-1.0, 1.0], &[1.0, 1.0]).unwrap();
        let (mean, cov) = m.moments().unwrap();
        assert_abs_diff_eq!(mean[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov[(0, 0)], 2.0, epsilon = 1e-15);
    }
}
