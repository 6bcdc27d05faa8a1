use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use super::{Density, DensityKind};
use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Multivariate normal `N(mean, covariance)`.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    // Lower Cholesky factor of the covariance.
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("gaussian dimension must be positive".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gaussian parameter".into()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-10 * covariance.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "covariance is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("gaussian covariance".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean,
            covariance,
            chol: l,
            precision,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    /// `N(mean, variance)` on the real line.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
        }
        Self::new(vec![mean], DMatrix::from_element(1, 1, variance))
    }

    /// `N(mean, variance · I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::InvalidArgument(format!("variance must be positive, got {variance}")));
        }
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        Self::new(mean, DMatrix::from_diagonal(&DVector::from_row_slice(variances)))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    fn centered(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, m)| a - m).collect()
    }
}

impl Density for GaussianDensity {
    fn moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        Some((self.mean.clone(), self.covariance.clone()))
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Gaussian
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.centered(x);
        let d = z.len();
        let mut quad = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.precision[(i, j)] * z[j];
            }
            quad += z[i] * row;
        }
        self.log_norm - 0.5 * quad
    }

    fn has_score(&self) -> bool {
        true
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let z = self.centered(x);
        let d = z.len();
        Ok((0..d)
            .map(|i| -(0..d).map(|j| self.precision[(i, j)] * z[j]).sum::<f64>())
            .collect())
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        Ok((0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.chol[(i, j)] * z[j]).sum::<f64>())
            .collect())
    }

    fn cdf(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Unsupported("CDF is only defined for 1D gaussians".into()));
        }
        let sd = self.covariance[(0, 0)].sqrt();
        Ok(0.5 * erfc(-(x - self.mean[0]) / (sd * std::f64::consts::SQRT_2)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_score() {
        let g = GaussianDensity::univariate(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(g.score(&[1.5]).unwrap()[0], -1.5, epsilon = 1e-15);
    }

    #[test]
    fn shifted_score() {
        let g = GaussianDensity::univariate(2.0, 4.0).unwrap();
        assert_abs_diff_eq!(g.score(&[0.0]).unwrap()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn log_density_matches_closed_form() {
        let g = GaussianDensity::univariate(1.0, 0.25).unwrap();
        let x = 1.3;
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 0.25).ln() - (x - 1.0f64).powi(2) / 0.5;
        assert_abs_diff_eq!(g.log_density(&[x]), expect, epsilon = 1e-13);
    }

    #[test]
    fn mode_is_maximum() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = GaussianDensity::new(vec![1.0, -1.0], cov).unwrap();
        let at_mean = g.log_density(&[1.0, -1.0]);
        for dx in [[0.1, 0.0], [0.0, -0.2], [0.3, 0.3]] {
            assert!(g.log_density(&[1.0 + dx[0], -1.0 + dx[1]]) < at_mean);
        }
    }

    #[test]
    fn rejects_bad_covariance() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianDensity::new(vec![0.0, 0.0], asym).is_err());
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianDensity::new(vec![0.0, 0.0], indef),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(GaussianDensity::univariate(0.0, 0.0).is_err());
    }

    #[test]
    fn cdf_at_quantiles() {
        let g = GaussianDensity::univariate(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(g.cdf(0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.cdf(1.959_963_984_540_054).unwrap(), 0.975, epsilon = 1e-10);
    }

    #[test]
    fn sample_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 1.0]);
        let g = GaussianDensity::new(vec![1.0, 2.0], cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| g.sample(&mut rng).unwrap()).collect();
        let m0 = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        let m1 = xs.iter().map(|x| x[1]).sum::<f64>() / n as f64;
        let c01 = xs.iter().map(|x| (x[0] - m0) * (x[1] - m1)).sum::<f64>() / n as f64;
        assert_abs_diff_eq!(m0, 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(m1, 2.0, epsilon = 0.03);
        assert_abs_diff_eq!(c01, 1.0, epsilon = 0.06);
    }
}
