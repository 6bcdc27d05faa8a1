use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::RngCore;

use super::ParticleMeasure;
use crate::density::{Density, DensityKind, DensityRef};
use crate::error::{check_dim, Error, Result};

/// The linear change of coordinates `z = C⁻¹ x` for an SPD matrix `C`.
#[derive(Debug, Clone)]
pub struct Standardization {
    c: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl Standardization {
    pub fn new(target_cov: DMatrix<f64>) -> Result<Self> {
        let d = target_cov.nrows();
        if d == 0 || target_cov.ncols() != d {
            return Err(Error::InvalidArgument("standardization matrix must be square".into()));
        }
        if (&target_cov - target_cov.transpose()).amax() > 1e-10 * target_cov.amax().max(1.0) {
            return Err(Error::InvalidArgument("standardization matrix is not symmetric".into()));
        }
        let chol = Cholesky::new(target_cov.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("standardization matrix".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self { c: target_cov, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// `log |det C|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `C⁻¹ x`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(x)).as_slice().to_vec()
    }

    /// `C z`.
    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        (&self.c * DVector::from_column_slice(z)).as_slice().to_vec()
    }

    pub fn map_points(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points
            .iter()
            .map(|x| {
                check_dim(self.dim(), x.len())?;
                Ok(self.forward(x))
            })
            .collect()
    }

    pub fn map_measure(&self, pi: &ParticleMeasure) -> Result<ParticleMeasure> {
        ParticleMeasure::new(self.map_points(pi.points())?, pi.weights().to_vec())
    }

    /// Density of `C⁻¹ X` when `X` has density `inner`.
    pub fn wrap(&self, inner: DensityRef) -> Result<StandardizedDensity> {
        check_dim(self.dim(), inner.dim())?;
        Ok(StandardizedDensity { inner, map: self.clone() })
    }
}

/// Maps points through `x ↦ C⁻¹ x`.
pub fn standardize(target_cov: &DMatrix<f64>, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Standardization::new(target_cov.clone())?.map_points(points)
}

/// A density expressed in standardized coordinates:
/// `log p̃(z) = log p(C z) + log |det C|`.
#[derive(Debug, Clone)]
pub struct StandardizedDensity {
    inner: DensityRef,
    map: Standardization,
}

impl StandardizedDensity {
    pub fn into_ref(self) -> DensityRef {
        Arc::new(self)
    }
}

impl Density for StandardizedDensity {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Custom
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        self.inner.log_density(&self.map.inverse(z)) + self.map.log_det
    }

    fn has_score(&self) -> bool {
        self.inner.has_score()
    }

    fn score(&self, z: &[f64]) -> Result<Vec<f64>> {
        let s = self.inner.score(&self.map.inverse(z))?;
        // C is symmetric, so Cᵀ s = C s
        Ok(self.map.inverse(&s))
    }

    fn is_normalized(&self) -> bool {
        self.inner.is_normalized()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(self.map.forward(&self.inner.sample(rng)?))
    }

    fn cdf(&self, z: f64) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Unsupported("cdf of a multivariate density".into()));
        }
        self.inner.cdf(self.map.c[(0, 0)] * z)
    }
}
