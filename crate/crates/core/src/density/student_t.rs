use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StudentT};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use super::{Density, DensityKind};
use crate::error::{check_dim, Error, Result};

/// Univariate location-scale Student-t with `df` degrees of freedom.
#[derive(Debug, Clone)]
pub struct StudentTDensity {
    df: f64,
    loc: f64,
    scale: f64,
    log_norm: f64,
}

impl StudentTDensity {
    pub fn new(df: f64, loc: f64, scale: f64) -> Result<Self> {
        if !(df > 0.0) || !(scale > 0.0) || !loc.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "invalid student-t parameters df={df}, loc={loc}, scale={scale}"
            )));
        }
        let log_norm = ln_gamma((df + 1.0) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln()
            - scale.ln();
        Ok(Self { df, loc, scale, log_norm })
    }
}

impl Density for StudentTDensity {
    fn moments(&self) -> Option<(Vec<f64>, DMatrix<f64>)> {
        (self.df > 2.0).then(|| {
            let var = self.scale * self.scale * self.df / (self.df - 2.0);
            (vec![self.loc], DMatrix::from_element(1, 1, var))
        })
    }

    fn dim(&self) -> usize {
        1
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Custom
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let z = (x[0] - self.loc) / self.scale;
        self.log_norm - 0.5 * (self.df + 1.0) * (z * z / self.df).ln_1p()
    }

    fn has_score(&self) -> bool {
        true
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(1, x.len())?;
        let r = x[0] - self.loc;
        Ok(vec![-(self.df + 1.0) * r / (self.df * self.scale * self.scale + r * r)])
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let t = StudentT::new(self.df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(vec![self.loc + self.scale * t.sample(rng)])
    }

    fn cdf(&self, x: f64) -> Result<f64> {
        let d = StudentsT::new(self.loc, self.scale, self.df)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(d.cdf(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_to_one() {
        let t = StudentTDensity::new(10.0, 0.3, 0.5).unwrap();
        let h = 1e-3;
        let total: f64 = (-40_000..40_000)
            .map(|i| t.log_density(&[0.3 + (i as f64 + 0.5) * h]).exp() * h)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn cdf_symmetry() {
        let t = StudentTDensity::new(10.0, -0.2, 0.1).unwrap();
        assert_abs_diff_eq!(t.cdf(-0.2).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t.cdf(-0.1).unwrap() + t.cdf(-0.3).unwrap(), 1.0, epsilon = 1e-12);
    }
}
