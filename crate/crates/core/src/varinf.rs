//! Variational inference with affine transport maps, driven by unbiased
//! U-statistic gradients of the squared discrepancy.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{log_density_ratio, Density, DensityKind, DensityRef, GaussianDensity};
use crate::error::{check_dim, Error, Result};
use crate::kernel::ImqKernel;
use crate::numeric::{norm, CompensatedSum};

/// `T^θ(x) = exp(θ_{1..d}) ∘ x + θ_{d+1..2d}` with a diagonal positive scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffineTransport {
    theta: Vec<f64>,
}

impl AffineTransport {
    pub fn identity(dim: usize) -> Self {
        Self { theta: vec![0.0; 2 * dim] }
    }

    pub fn from_theta(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.len() % 2 != 0 {
            return Err(Error::InvalidArgument("θ must have even, positive length".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("θ must be finite".into()));
        }
        Ok(Self { theta })
    }

    pub fn new(scales: &[f64], shifts: &[f64]) -> Result<Self> {
        check_dim(scales.len(), shifts.len())?;
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("scales must be positive".into()));
        }
        let mut theta: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
        theta.extend_from_slice(shifts);
        Self::from_theta(theta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len() / 2
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn scales(&self) -> Vec<f64> {
        self.theta[..self.dim()].iter().map(|t| t.exp()).collect()
    }

    pub fn shifts(&self) -> &[f64] {
        &self.theta[self.dim()..]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|k| self.theta[k].exp() * x[k] + self.theta[d + k]).collect()
    }

    /// Law of `T(X)` for `X ~ reference`.
    pub fn pushforward(&self, reference: &GaussianDensity) -> Result<GaussianDensity> {
        check_dim(self.dim(), reference.dim())?;
        let s = self.scales();
        let mean = self.apply(reference.mean());
        let sm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s));
        let cov = &sm * reference.covariance() * &sm;
        GaussianDensity::new(mean, (&cov + cov.transpose()) * 0.5)
    }
}

/// `log p_ε = ε log p₀ + (1 − ε) log p`; the endpoints return the exact
/// component so that infinities do not produce NaN.
#[derive(Debug, Clone)]
pub struct TemperedDensity {
    p0: DensityRef,
    p: DensityRef,
    epsilon: f64,
}

impl TemperedDensity {
    pub fn new(p0: DensityRef, p: DensityRef, epsilon: f64) -> Result<Self> {
        check_dim(p.dim(), p0.dim())?;
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!("tempering ε = {epsilon} outside [0, 1]")));
        }
        Ok(Self { p0, p, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Density for TemperedDensity {
    fn dim(&self) -> usize {
        self.p.dim()
    }

    fn kind(&self) -> DensityKind {
        DensityKind::Custom
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        match self.epsilon {
            e if e == 0.0 => self.p.log_density(x),
            e if e == 1.0 => self.p0.log_density(x),
            e => e * self.p0.log_density(x) + (1.0 - e) * self.p.log_density(x),
        }
    }

    fn has_score(&self) -> bool {
        match self.epsilon {
            e if e == 0.0 => self.p.has_score(),
            e if e == 1.0 => self.p0.has_score(),
            _ => self.p.has_score() && self.p0.has_score(),
        }
    }

    fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.epsilon {
            e if e == 0.0 => self.p.score(x),
            e if e == 1.0 => self.p0.score(x),
            e => {
                let a = self.p0.score(x)?;
                let b = self.p.score(x)?;
                Ok(a.iter().zip(&b).map(|(a, b)| e * a + (1.0 - e) * b).collect())
            }
        }
    }
}

/// Tempering levels `ε_m` interpolating from `p₀` (ε = 1) to the target (ε = 0).
#[derive(Debug, Clone)]
pub struct TemperingSchedule {
    epsilons: Vec<f64>,
    p0: DensityRef,
}

impl TemperingSchedule {
    pub fn new(epsilons: Vec<f64>, p0: DensityRef) -> Result<Self> {
        if epsilons.is_empty() {
            return Err(Error::InvalidArgument("tempering schedule is empty".into()));
        }
        if let Some(e) = epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::InvalidArgument(format!("tempering ε = {e} outside [0, 1]")));
        }
        Ok(Self { epsilons, p0 })
    }

    /// A single level `ε = 0`: the untempered target.
    pub fn untempered(p0: DensityRef) -> Self {
        Self { epsilons: vec![0.0], p0 }
    }

    /// `levels` values decreasing linearly from 1 to 0.
    pub fn linear(levels: usize, p0: DensityRef) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidArgument("linear schedule needs at least 2 levels".into()));
        }
        let eps = (0..levels).map(|m| 1.0 - m as f64 / (levels - 1) as f64).collect();
        Self::new(eps, p0)
    }

    /// Reads one ε per row of a headerless CSV.
    pub fn from_csv(path: &std::path::Path, p0: DensityRef) -> Result<Self> {
        let rows = crate::density::load_samples_csv(path)?;
        if rows.iter().any(|r| r.len() != 1) {
            return Err(Error::Config("schedule CSV must have a single column".into()));
        }
        Self::new(rows.into_iter().map(|r| r[0]).collect(), p0)
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    pub fn p0(&self) -> &DensityRef {
        &self.p0
    }
}

/// The tempered target at level `m`.
pub fn temper_log_density(schedule: &TemperingSchedule, p: DensityRef, m: usize) -> Result<TemperedDensity> {
    let eps = *schedule
        .epsilons
        .get(m)
        .ok_or_else(|| Error::InvalidArgument(format!("level {m} beyond schedule of length {}", schedule.len())))?;
    TemperedDensity::new(schedule.p0.clone(), p, eps)
}

/// The integrand `u(x, y) = (q/p)(x) (q/p)(y) k_q(x, y)`.
pub fn u_integrand(p: &dyn Density, q: &dyn Density, kernel: &ImqKernel, x: &[f64], y: &[f64]) -> Result<f64> {
    let lx = log_density_ratio(q, p, x)?;
    let ly = log_density_ratio(q, p, y)?;
    let sx = q.score(x)?;
    let sy = q.score(y)?;
    Ok((lx + ly).exp() * kernel.stein_kernel(x, y, &sx, &sy)?.value)
}

/// `1/(n(n−1)) Σ_{i≠j} u(x_i, x_j)`.
pub fn u_statistic(p: &dyn Density, q: &dyn Density, kernel: &ImqKernel, points: &[Vec<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("U-statistic needs at least 2 points".into()));
    }
    if !q.has_score() {
        return Err(Error::Unsupported("q needs a score".into()));
    }
    let lr: Vec<f64> = points.iter().map(|x| log_density_ratio(q, p, x)).collect::<Result<_>>()?;
    let sc: Vec<Vec<f64>> = points.iter().map(|x| q.score(x)).collect::<Result<_>>()?;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = CompensatedSum::new();
            for j in 0..n {
                if i != j {
                    let k = kernel.stein_kernel_unchecked(&points[i], &points[j], &sc[i], &sc[j]).value;
                    s.add((lr[i] + lr[j]).exp() * k);
                }
            }
            s.value()
        })
        .collect();
    let total = rows.into_iter().collect::<CompensatedSum>().value() / (n * (n - 1)) as f64;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("non-finite integrand sum {total}")));
    }
    Ok(total)
}

/// U-statistic estimate of `∇_θ D_{p,q}(T^θ_# R)²` with `q` held fixed.
///
/// Each coordinate uses a central difference with step
/// `fd_step · (1 + |θ_k|)` on the same batch.
pub fn grad_estimate(
    p: &dyn Density,
    q: &dyn Density,
    kernel: &ImqKernel,
    transport: &AffineTransport,
    ref_samples: &[Vec<f64>],
    fd_step: f64,
) -> Result<Vec<f64>> {
    check_dim(transport.dim(), p.dim())?;
    check_dim(transport.dim(), q.dim())?;
    if ref_samples.len() < 2 {
        return Err(Error::InvalidArgument("gradient estimate needs n ≥ 2".into()));
    }
    let theta = transport.theta();
    (0..theta.len())
        .map(|k| {
            let h = fd_step * (1.0 + theta[k].abs());
            let eval = |delta: f64| -> Result<f64> {
                let mut t = theta.to_vec();
                t[k] += delta;
                let map = AffineTransport { theta: t };
                let pts: Vec<Vec<f64>> = ref_samples.iter().map(|x| map.apply(x)).collect();
                u_statistic(p, q, kernel, &pts)
                    .map_err(|e| Error::Numeric(format!("gradient evaluation failed for θ[{k}]: {e}")))
            };
            Ok((eval(h)? - eval(-h)?) / (2.0 * h))
        })
        .collect()
}

/// Rescales `g` to norm `min(‖g‖, clip_norm)`.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Vec<f64> {
    let n = norm(g);
    if n > clip_norm && n > 0.0 {
        g.iter().map(|v| v * clip_norm / n).collect()
    } else {
        g.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub step: f64,
    pub clip_norm: f64,
    pub iters_per_temper: usize,
    pub batch_n: usize,
    pub seed: u64,
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { step: 3e-3, clip_norm: 30.0, iters_per_temper: 100, batch_n: 64, seed: 0, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub epsilon: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub update_norm: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub transport: AffineTransport,
    pub trace: Vec<TraceRow>,
    /// Iteration at which the objective exceeded the divergence threshold.
    pub diverged_at: Option<usize>,
}

const DIVERGENCE: f64 = 1e12;

/// Clipped stochastic gradient descent on `θ`, refreshing `q ← T^θ_# R`
/// before every step and holding each tempering level for
/// `iters_per_temper` iterations.
pub fn fit_transport(
    p: DensityRef,
    schedule: &TemperingSchedule,
    reference: &GaussianDensity,
    init: AffineTransport,
    kernel: &ImqKernel,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_dim(p.dim(), reference.dim())?;
    check_dim(p.dim(), init.dim())?;
    if opts.batch_n < 2 {
        return Err(Error::InvalidArgument("batch_n must be at least 2".into()));
    }
    if !(opts.step > 0.0) || !(opts.clip_norm > 0.0) {
        return Err(Error::InvalidArgument("step and clip_norm must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut transport = init;
    let mut trace = Vec::new();
    let mut iteration = 0;
    for m in 0..schedule.len() {
        let target = temper_log_density(schedule, p.clone(), m)?;
        for _ in 0..opts.iters_per_temper {
            let q = transport.pushforward(reference)?;
            let batch: Vec<Vec<f64>> =
                (0..opts.batch_n).map(|_| reference.sample(&mut rng)).collect::<Result<_>>()?;
            let pts: Vec<Vec<f64>> = batch.iter().map(|x| transport.apply(x)).collect();
            // overflowing ratios surface as a numeric error; count them as divergence
            let objective = match u_statistic(&target, &q, kernel, &pts) {
                Err(Error::Numeric(_)) => f64::INFINITY,
                other => other?,
            };
            let diverged = !objective.is_finite() || objective > DIVERGENCE;
            let grad = if diverged {
                vec![0.0; transport.theta.len()]
            } else {
                grad_estimate(&target, &q, kernel, &transport, &batch, opts.fd_step)?
            };
            let clipped = clip_gradient(&grad, opts.clip_norm);
            let update: Vec<f64> = clipped.iter().map(|g| -opts.step * g).collect();
            trace.push(TraceRow {
                iteration,
                epsilon: target.epsilon(),
                objective,
                grad_norm: norm(&grad),
                update_norm: if diverged { 0.0 } else { norm(&update) },
                theta: transport.theta.clone(),
            });
            if diverged {
                return Ok(FitResult { transport, trace, diverged_at: Some(iteration) });
            }
            for (t, u) in transport.theta.iter_mut().zip(&update) {
                *t += u;
            }
            iteration += 1;
        }
    }
    Ok(FitResult { transport, trace, diverged_at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discrepancy::{gfksd_squared, ParticleMeasure};
    use std::sync::Arc;

    fn gauss(m: f64, v: f64) -> DensityRef {
        Arc::new(GaussianDensity::univariate(m, v).unwrap())
    }

    #[test]
    fn u_integrand_examples() {
        let g = gauss(0.0, 1.0);
        let k = ImqKernel::default();
        assert!((u_integrand(g.as_ref(), g.as_ref(), &k, &[0.0], &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        let p = gauss(0.5, 2.0);
        let a = u_integrand(p.as_ref(), g.as_ref(), &k, &[0.3], &[-1.2]).unwrap();
        let b = u_integrand(p.as_ref(), g.as_ref(), &k, &[-1.2], &[0.3]).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn weighted_u_sum_matches_discrepancy() {
        let q = gauss(0.0, 1.0);
        let p = gauss(0.5, 2.0);
        let k = ImqKernel::default();
        let pi = ParticleMeasure::new(vec![vec![-0.4], vec![0.9], vec![2.0]], vec![0.2, 0.5, 0.3]).unwrap();
        let mut s = 0.0;
        for (x, wx) in pi.points().iter().zip(pi.weights()) {
            for (y, wy) in pi.points().iter().zip(pi.weights()) {
                s += wx * wy * u_integrand(p.as_ref(), q.as_ref(), &k, x, y).unwrap();
            }
        }
        let d = gfksd_squared(p.as_ref(), q.as_ref(), &k, &pi).unwrap().value_squared;
        assert!((s - d).abs() < 1e-12);
    }

    #[test]
    fn tempering_endpoints_and_midpoint() {
        let p = gauss(0.0, 1.0);
        let p0 = gauss(0.0, 4.0);
        let sched = TemperingSchedule::new(vec![0.0, 0.5, 1.0], p0.clone()).unwrap();
        let t0 = temper_log_density(&sched, p.clone(), 0).unwrap();
        let t1 = temper_log_density(&sched, p.clone(), 2).unwrap();
        let th = temper_log_density(&sched, p.clone(), 1).unwrap();
        for x in [-2.0, 0.3, 1.7] {
            assert_eq!(t0.log_density(&[x]), p.log_density(&[x]));
            assert_eq!(t1.log_density(&[x]), p0.log_density(&[x]));
            // precision 0.625
            assert!((th.score(&[x]).unwrap()[0] + 0.625 * x).abs() < 1e-14);
        }
        assert!(temper_log_density(&sched, p, 3).is_err());
        assert!(TemperingSchedule::new(vec![1.2], p0).is_err());
    }

    #[test]
    fn pushforward_matches_sample_map() {
        let r = GaussianDensity::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let t = AffineTransport::new(&[0.5, 2.0], &[1.0, -1.0]).unwrap();
        let pf = t.pushforward(&r).unwrap();
        assert_eq!(pf.mean(), &[1.0, -1.0]);
        assert!((pf.covariance()[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((pf.covariance()[(1, 1)] - 4.0).abs() < 1e-15);
        assert_eq!(t.apply(&[2.0, 1.0]), vec![2.0, 1.0]);
    }

    #[test]
    fn clipping_preserves_direction() {
        let g = clip_gradient(&[30.0, 40.0], 30.0);
        assert!((g[0] - 18.0).abs() < 1e-12 && (g[1] - 24.0).abs() < 1e-12);
        assert_eq!(clip_gradient(&[3.0, 4.0], 30.0), vec![3.0, 4.0]);
    }

    #[test]
    fn u_statistic_excludes_diagonal() {
        let q = gauss(0.0, 1.0);
        let k = ImqKernel::default();
        let pts = vec![vec![-0.5], vec![0.1], vec![1.1]];
        let u = u_statistic(q.as_ref(), q.as_ref(), &k, &pts).unwrap();
        let mut off = 0.0;
        let mut all = 0.0;
        for x in &pts {
            for y in &pts {
                let v = u_integrand(q.as_ref(), q.as_ref(), &k, x, y).unwrap();
                all += v;
                if x != y {
                    off += v;
                }
            }
        }
        assert!((u - off / 6.0).abs() < 1e-14);
        assert!((u - all / 6.0).abs() > 1e-3);
    }

    #[test]
    fn halving_fd_step_changes_little() {
        let p = gauss(1.0, 0.5);
        let r = GaussianDensity::univariate(0.0, 1.0).unwrap();
        let t = AffineTransport::new(&[0.9], &[0.4]).unwrap();
        let q = t.pushforward(&r).unwrap();
        let k = ImqKernel::default();
        let batch: Vec<Vec<f64>> = (0..16).map(|i| vec![-1.5 + 0.2 * i as f64]).collect();
        let a = grad_estimate(p.as_ref(), &q, &k, &t, &batch, 1e-4).unwrap();
        let b = grad_estimate(p.as_ref(), &q, &k, &t, &batch, 5e-5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} {y}");
        }
    }
}
