use std::cell::Cell;
use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::{fd_score, Density, GaussianDensity};
use crate::error::{Error, Result};

/// Mode-finding algorithm for [`fit_laplace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceOptimizer {
    /// Steepest ascent with Armijo backtracking.
    GradientDescent,
    /// Limited-memory BFGS (memory 10) with Armijo backtracking.
    Lbfgs,
}

#[derive(Debug, Clone)]
pub struct LaplaceOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Relative step for the finite-difference Hessian, `h_i = fd_step·(1+|x_i|)`.
    pub fd_step: f64,
    pub optimizer: LaplaceOptimizer,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            grad_tol: 1e-6,
            fd_step: 1e-4,
            optimizer: LaplaceOptimizer::GradientDescent,
        }
    }
}

/// Gaussian approximation at a mode of the target.
#[derive(Debug, Clone)]
pub struct LaplaceApprox {
    pub gaussian: GaussianDensity,
    pub mode: Vec<f64>,
    pub log_density_at_mode: f64,
    pub iterations: usize,
    /// Gradient evaluations spent on the optimization path.
    pub optimizer_grad_evals: usize,
    /// Gradient evaluations spent on the finite-difference Hessian.
    pub hessian_grad_evals: usize,
}

impl LaplaceApprox {
    pub fn grad_evals(&self) -> usize {
        self.optimizer_grad_evals + self.hessian_grad_evals
    }
}

struct Objective<'a> {
    target: &'a dyn Density,
    grad_evals: Cell<usize>,
}

impl Objective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        -self.target.log_density(x)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.grad_evals.set(self.grad_evals.get() + 1);
        let s = if self.target.has_score() {
            self.target.score(x).unwrap_or_else(|_| fd_score(self.target, x, 1e-5))
        } else {
            fd_score(self.target, x, 1e-5)
        };
        s.into_iter().map(|v| -v).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C: f64 = 1e-4;

/// Backtracking along `dir` from `x`; returns the accepted step and point.
fn backtrack(obj: &Objective, x: &[f64], fx: f64, g: &[f64], dir: &[f64], t0: f64) -> Option<(f64, Vec<f64>, f64)> {
    let slope = dot(g, dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut t = t0;
    for _ in 0..80 {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let ft = obj.value(&trial);
        if ft.is_finite() && ft <= fx + ARMIJO_C * t * slope {
            return Some((t, trial, ft));
        }
        t *= 0.5;
    }
    None
}

/// Laplace approximation `N(x*, H⁻¹)` of `target` started from `init`.
///
/// `x*` maximizes `log target`; `H` is the negative Hessian at `x*`, built from
/// central differences of the gradient and symmetrized. The gradient is the
/// analytic score when available, else a finite difference of `log_density`.
pub fn fit_laplace(target: &dyn Density, init: &[f64], opts: &LaplaceOptions) -> Result<LaplaceApprox> {
    let d = target.dim();
    crate::error::check_dim(d, init.len())?;
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite Laplace initial point".into()));
    }
    let obj = Objective {
        target,
        grad_evals: Cell::new(0),
    };
    let mut x = init.to_vec();
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(Error::InvalidArgument("target log-density is not finite at the initial point".into()));
    }
    let mut g = obj.grad(&x);
    let mut iterations = 0;
    let mut step = 1.0;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    while norm(&g) > opts.grad_tol {
        if iterations >= opts.max_iters {
            return Err(Error::NotConverged {
                iterations,
                grad_norm: norm(&g),
                best: x,
            });
        }
        iterations += 1;
        let dir = match opts.optimizer {
            LaplaceOptimizer::GradientDescent => g.iter().map(|v| -v).collect::<Vec<_>>(),
            LaplaceOptimizer::Lbfgs => lbfgs_direction(&g, &history),
        };
        let t0 = match opts.optimizer {
            LaplaceOptimizer::GradientDescent => step * 2.0,
            LaplaceOptimizer::Lbfgs if history.is_empty() => 1.0 / norm(&g).max(1.0),
            LaplaceOptimizer::Lbfgs => 1.0,
        };
        let accepted = backtrack(&obj, &x, fx, &g, &dir, t0).or_else(|| {
            // fall back to steepest descent if the quasi-Newton direction fails
            history.clear();
            let sd: Vec<f64> = g.iter().map(|v| -v).collect();
            backtrack(&obj, &x, fx, &g, &sd, 1.0 / norm(&g).max(1.0))
        });
        let Some((t, x_new, f_new)) = accepted else {
            return Err(Error::NotConverged {
                iterations,
                grad_norm: norm(&g),
                best: x,
            });
        };
        let g_new = obj.grad(&x_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > 10 {
                history.pop_front();
            }
        }
        step = t;
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    let optimizer_grad_evals = obj.grad_evals.get();

    let mut hess = DMatrix::zeros(d, d);
    let mut xp = x.clone();
    for j in 0..d {
        let h = opts.fd_step * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let up = obj.grad(&xp);
        xp[j] = x[j] - h;
        let down = obj.grad(&xp);
        xp[j] = x[j];
        for i in 0..d {
            hess[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    let hess = (&hess + hess.transpose()) * 0.5;
    let chol = hess
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("negative log-density Hessian at the mode".into()))?;
    // one Newton step with the Hessian already in hand; the stopping rule
    // leaves a mode error of order λ_max(H⁻¹)·grad_tol otherwise
    let newton = chol.solve(&nalgebra::DVector::from_column_slice(&g));
    let refined: Vec<f64> = x.iter().zip(newton.iter()).map(|(a, b)| a - b).collect();
    let f_ref = obj.value(&refined);
    if f_ref.is_finite() && f_ref <= fx + 1e-12 * fx.abs().max(1.0) {
        x = refined;
        fx = f_ref;
    }
    let cov = chol.inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    let gaussian = GaussianDensity::new(x.clone(), cov)?;
    Ok(LaplaceApprox {
        gaussian,
        log_density_at_mode: -fx,
        mode: x,
        iterations,
        optimizer_grad_evals,
        hessian_grad_evals: obj.grad_evals.get() - optimizer_grad_evals,
    })
}

fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.into_iter().map(|v| -v).collect()
}
