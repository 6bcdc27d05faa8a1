//! Stein importance sampling: reweight draws from `q` by minimizing the
//! discrepancy over the weight simplex.

mod energy;
mod qp;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::density::{Density, DensityRef};
use crate::discrepancy::{gfksd_squared, log_ratios, scores, GfksdResult, ParticleMeasure, Standardization};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{stein_matrix, ImqKernel, SteinMatrix};

pub use energy::{energy_distance, EnergyReference};
pub use qp::{
    kkt_residual, optimal_stein_weights, optimal_stein_weights_log, project_simplex, solve_simplex_qp, QpOptions,
    QpSolution,
};

/// Normalizes log-weights by subtracting the maximum before exponentiating.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = log_w.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NonFiniteRatio { index: i, value: log_w[i] });
    }
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::Degenerate("all importance weights are zero".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Self-normalized importance weights `w_i ∝ p(x_i)/q(x_i)`.
pub fn self_normalized_weights(p: &dyn Density, q: &dyn Density, points: &[Vec<f64>]) -> Result<ParticleMeasure> {
    check_dim(p.dim(), q.dim())?;
    let log_w = points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            check_dim(p.dim(), x.len())?;
            let lq = q.log_density(x);
            if lq == f64::NEG_INFINITY {
                return Err(Error::NonFiniteRatio { index: i, value: f64::INFINITY });
            }
            Ok(p.log_density(x) - lq)
        })
        .collect::<Result<Vec<f64>>>()?;
    ParticleMeasure::new(points.to_vec(), normalize_log_weights(&log_w)?)
}

/// Stein matrix and log-ratios for `points`, optionally evaluated in
/// standardized coordinates. Log-ratios are unaffected by standardization
/// because the Jacobian terms cancel.
pub fn stein_system(
    p: &dyn Density,
    q: &DensityRef,
    kernel: &ImqKernel,
    points: &[Vec<f64>],
    standardization: Option<&Standardization>,
) -> Result<(SteinMatrix, Vec<f64>)> {
    check_dim(q.dim(), p.dim())?;
    let lr = log_ratios(p, q.as_ref(), points)?;
    let k = match standardization {
        Some(s) => {
            let z = s.map_points(points)?;
            let qz = s.wrap(q.clone())?;
            stein_matrix(kernel, &z, &scores(&qz, &z)?)?
        }
        None => stein_matrix(kernel, points, &scores(q.as_ref(), points)?)?,
    };
    Ok((k, lr))
}

#[derive(Debug, Clone, Default)]
pub struct SisOptions {
    pub qp: QpOptions,
    /// Evaluate the Stein kernel in coordinates `x ↦ C⁻¹ x`.
    pub standardize: Option<DMatrix<f64>>,
}

/// Stein-weighted and self-normalized measures on a common sample from `q`.
#[derive(Debug, Clone)]
pub struct WeightedComparison {
    pub stein_weighted: ParticleMeasure,
    pub snis_weighted: ParticleMeasure,
    pub energy_distance_stein: Option<f64>,
    pub energy_distance_snis: Option<f64>,
    pub qp: QpSolution,
    /// Discrepancy of the Stein-weighted measure (in the coordinates used for the QP).
    pub gfksd: f64,
}

/// Draws `n` points from `q` with a seeded RNG.
pub fn draw_samples(q: &dyn Density, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| q.sample(&mut rng)).collect()
}

/// Reweights a given sample from `q`.
pub fn stein_reweight(
    p: &dyn Density,
    q: &DensityRef,
    kernel: &ImqKernel,
    points: Vec<Vec<f64>>,
    reference: Option<&EnergyReference>,
    opts: &SisOptions,
) -> Result<WeightedComparison> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let standardization = opts.standardize.clone().map(Standardization::new).transpose()?;
    let (k, lr) = stein_system(p, q, kernel, &points, standardization.as_ref())?;
    let qp = optimal_stein_weights_log(&k, &lr, &opts.qp)?;
    let stein_weighted = ParticleMeasure::new(points.clone(), qp.weights.clone())?;
    let snis_weighted = self_normalized_weights(p, q.as_ref(), &points)?;
    let (energy_distance_stein, energy_distance_snis) = match reference {
        Some(r) => (Some(r.distance(&stein_weighted)?), Some(r.distance(&snis_weighted)?)),
        None => (None, None),
    };
    Ok(WeightedComparison {
        gfksd: qp.objective.max(0.0).sqrt(),
        stein_weighted,
        snis_weighted,
        energy_distance_stein,
        energy_distance_snis,
        qp,
    })
}

/// Draws `n` i.i.d. points from `q` and compares Stein and self-normalized
/// weights, optionally scoring both against a reference sample from `p`.
pub fn stein_importance_sample(
    p: &dyn Density,
    q: &DensityRef,
    kernel: &ImqKernel,
    n: usize,
    seed: u64,
    reference: Option<&EnergyReference>,
    opts: &SisOptions,
) -> Result<WeightedComparison> {
    let points = draw_samples(q.as_ref(), n, seed)?;
    stein_reweight(p, q, kernel, points, reference, opts)
}

/// Discrepancy of a weighted measure, convenience for comparisons.
pub fn discrepancy_of(p: &dyn Density, q: &dyn Density, kernel: &ImqKernel, pi: &ParticleMeasure) -> Result<GfksdResult> {
    gfksd_squared(p, q, kernel, pi)
}
