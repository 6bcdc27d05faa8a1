use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::erfc;

use super::{log_sum_exp, Density, DensityKind};
use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Gaussian kernel density estimate with a per-dimension bandwidth.
///
/// Each sample point carries a `N(x_i, diag(ℓ²))` bump.
#[derive(Debug, Clone)]
pub struct KdeDensity {
    points: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl KdeDensity {
    pub fn new(points: Vec<Vec<f64>>, bandwidth: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("kde needs at least one point".into()));
        }
        let d = bandwidth.len();
        for p in &points {
            check_dim(d, p.len())?;
        }
        if bandwidth.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Degenerate(format!("kde bandwidth must be positive, got {bandwidth:?}")));
        }
        let log_norm = -(points.len() as f64).ln()
            - 0.5 * d as f64 * LN_2PI
            - bandwidth.iter().map(|h| h.ln()).sum::<f64>();
        Ok(Self { points, bandwidth, log_norm })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn kernel_log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| {
                -0.5 * p
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidth)
                    .map(|((pi, xi), h)| ((xi - pi) / h).powi(2))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// Silverman's rule `(4 / ((d+2) n))^{1/(d+4)} · σ̂_k` per dimension, with
/// `σ̂_k` the (biased, divide-by-n) sample standard deviation.
pub fn silverman_bandwidth(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("kde needs n >= 2 samples, got {n}")));
    }
    let d = samples[0].len();
    for s in samples {
        check_dim(d, s.len())?;
    }
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    (0..d)
        .map(|k| {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n as f64;
            if !(var > 0.0) {
                return Err(Error::Degenerate(format!("zero sample variance in dimension {k}")));
            }
            Ok(factor * var.sqrt())
        })
        .collect()
}

/// Gaussian KDE with Silverman bandwidth.
pub fn fit_kde(samples: &[Vec<f64>]) -> Result<KdeDensity> {
    let bandwidth = silverman_bandwidth(samples)?;
    KdeDensity::new(samples.to_vec(), bandwidth)
}

impl Density for KdeDensity {
    fn moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let n = self.points.len() as f64;
        let d = self.bandwidth.len();
        let mean: Vec<f64> = (0..d).map(|k| self.points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
        let mut cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, self.bandwidth.iter().map(|h| h * h)));
        for p in &self.points {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
                }
            }
        }
        Some((mean, cov))
    }

    fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Kde
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_norm + log_sum_exp(&self.kernel_log_terms(x))
    }

    fn has_score(&self) -> bool {
        true
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let terms = self.kernel_log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; self.dim()];
        for (t, p) in terms.iter().zip(&self.points) {
            let r = (t - lse).exp();
            for k in 0..out.len() {
                out[k] -= r * (x[k] - p[k]) / (self.bandwidth[k] * self.bandwidth[k]);
            }
        }
        Ok(out)
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let i = rng.random_range(0..self.points.len());
        Ok(self.points[i]
            .iter()
            .zip(&self.bandwidth)
            .map(|(p, h)| {
                let z: f64 = StandardNormal.sample(rng);
                p + h * z
            })
            .collect())
    }

    fn cdf(&self, x: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Unsupported("CDF is only defined for 1D kde".into()));
        }
        let h = self.bandwidth[0];
        let total: f64 = self
            .points
            .iter()
            .map(|p| 0.5 * erfc(-(x - p[0]) / (h * std::f64::consts::SQRT_2)))
            .sum();
        Ok(total / self.points.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn silverman_two_points() {
        let kde = fit_kde(&[vec![-1.0], vec![1.0]]).unwrap();
        assert_abs_diff_eq!(kde.bandwidth()[0], (4.0f64 / 6.0).powf(0.2), epsilon = 1e-15);
        assert_abs_diff_eq!(kde.bandwidth()[0], 0.9221, epsilon = 1e-4);
    }

    #[test]
    fn score_zero_at_midpoint() {
        let kde = fit_kde(&[vec![-1.0], vec![1.0]]).unwrap();
        assert_abs_diff_eq!(kde.score(&[0.0]).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn precondition_errors() {
        assert!(matches!(fit_kde(&[vec![1.0]]), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_kde(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_kde(&[vec![2.0], vec![2.0]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn integrates_to_one() {
        let samples: Vec<Vec<f64>> = [-0.4, 0.1, 0.3, 0.35, 1.2].iter().map(|v| vec![*v]).collect();
        let kde = fit_kde(&samples).unwrap();
        let h = 1e-3;
        let total: f64 = (-10_000..10_000)
            .map(|i| kde.log_density(&[(i as f64 + 0.5) * h]).exp() * h)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }
}
