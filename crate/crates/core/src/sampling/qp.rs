//! Minimization of `wᵀ A w` over the probability simplex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::SteinMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 50_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    /// `wᵀ K̃ w` with the ratios at their true scale.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// KKT residual of the rescaled problem, see [`kkt_residual`].
    pub kkt_residual: f64,
    /// Rescaled objective after every iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}`.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `max_{i: w_i > 1e-8} (A w)_i − min_j (A w)_j`.
pub fn kkt_residual(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let g = a * DVector::from_column_slice(w);
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter()
        .zip(g.iter())
        .filter(|(wi, _)| **wi > 1e-8)
        .map(|(_, gi)| gi - gmin)
        .fold(0.0, f64::max)
}

fn quad(a: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(a * w))
}

fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    // deterministic, non-symmetric start so it is unlikely to be orthogonal to the top eigenvector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.7).sin());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&av);
        v = av / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients approach λ_max from below
    lambda.max(a.diagonal().max()) * 1.05
}

/// Equality-constrained minimizer on the support `s`, or `None` if the KKT
/// system is singular.
fn solve_on_support(a: &DMatrix<f64>, s: &[usize]) -> Option<Vec<f64>> {
    let m = s.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    for (r, &i) in s.iter().enumerate() {
        for (c, &j) in s.iter().enumerate() {
            kkt[(r, c)] = a[(i, j)];
        }
        kkt[(r, m)] = 1.0;
        kkt[(m, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    let w: Vec<f64> = sol.iter().take(m).copied().collect();
    if w.iter().all(|v| v.is_finite()) {
        Some(w)
    } else {
        None
    }
}

/// Primal active-set refinement started from `w`. Returns the refined point
/// only if it does not increase the objective.
fn polish(a: &DMatrix<f64>, w: &[f64]) -> Option<Vec<f64>> {
    let n = w.len();
    // enlarge the support until no outside gradient undercuts the multiplier beyond rounding
    let eps = 64.0 * f64::EPSILON * a.amax();
    let mut cur: Vec<f64> = w.to_vec();
    let mut support: Vec<usize> = (0..n).filter(|&i| cur[i] > 1e-10).collect();
    if support.is_empty() {
        return None;
    }
    let total: f64 = support.iter().map(|&i| cur[i]).sum();
    for i in 0..n {
        cur[i] = if support.contains(&i) { cur[i] / total } else { 0.0 };
    }
    for _ in 0..4 * n + 20 {
        let sub = solve_on_support(a, &support)?;
        let mut target = vec![0.0; n];
        for (k, &i) in support.iter().enumerate() {
            target[i] = sub[k];
        }
        if sub.iter().all(|v| *v >= 0.0) {
            cur = target;
            let g = a * DVector::from_column_slice(&cur);
            let nu = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
            let (j, gj) = (0..n)
                .filter(|i| !support.contains(i))
                .map(|i| (i, g[i]))
                .fold((usize::MAX, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            if j == usize::MAX || gj >= nu - eps {
                return Some(cur);
            }
            support.push(j);
            support.sort_unstable();
        } else {
            // move toward the subproblem solution until a weight hits zero
            let mut step = 1.0;
            let mut blocking = None;
            for &i in &support {
                let d = target[i] - cur[i];
                if target[i] < 0.0 && d < 0.0 {
                    let t = -cur[i] / d;
                    if t < step {
                        step = t;
                        blocking = Some(i);
                    }
                }
            }
            for i in 0..n {
                cur[i] += step * (target[i] - cur[i]);
            }
            let drop = blocking?;
            cur[drop] = 0.0;
            support.retain(|&i| i != drop && cur[i] > 0.0);
            if support.is_empty() {
                return None;
            }
        }
    }
    None
}

/// Runs the active-set refinement and keeps it if it satisfies the KKT
/// tolerance without raising the objective beyond rounding.
fn accept_polish(a: &DMatrix<f64>, w: &DVector<f64>, f: f64, tol: f64) -> Option<(DVector<f64>, f64, f64)> {
    let pv = DVector::from_vec(polish(a, w.as_slice())?);
    let fp = quad(a, &pv);
    let rp = kkt_residual(a, pv.as_slice());
    let slack = 1e-12 * f.abs().max(f64::MIN_POSITIVE);
    (rp < tol && fp <= f + slack).then_some((pv, fp, rp))
}

/// Minimizes `wᵀ A w` over the simplex for symmetric PSD `A`.
///
/// Accelerated projected gradient with a monotone restart, followed by an
/// active-set refinement on the detected support.
pub fn solve_simplex_qp(a: &DMatrix<f64>, opts: &QpOptions) -> Result<QpSolution> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidArgument("QP matrix must be square and non-empty".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("QP matrix contains non-finite entries".into()));
    }
    if n == 1 {
        let obj = a[(0, 0)];
        return Ok(QpSolution {
            weights: vec![1.0],
            objective: obj,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            trace: vec![obj],
        });
    }
    let lip = 2.0 * largest_eigenvalue(a);
    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut f = quad(a, &w);
    let mut trace = vec![f];
    if lip <= 0.0 {
        return Ok(QpSolution {
            weights: w.as_slice().to_vec(),
            objective: f,
            iterations: 0,
            converged: true,
            kkt_residual: 0.0,
            trace,
        });
    }
    let mut y = w.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = kkt_residual(a, w.as_slice());
    let mut polished_at = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let grad = 2.0 * (a * &y);
        let step: Vec<f64> = y.iter().zip(grad.iter()).map(|(yi, gi)| yi - gi / lip).collect();
        let mut w_next = DVector::from_vec(project_simplex(&step));
        let mut f_next = quad(a, &w_next);
        if f_next > f {
            // restart: plain projected gradient step from w is monotone
            let g = 2.0 * (a * &w);
            let step: Vec<f64> = w.iter().zip(g.iter()).map(|(wi, gi)| wi - gi / lip).collect();
            w_next = DVector::from_vec(project_simplex(&step));
            f_next = quad(a, &w_next);
            if f_next > f {
                w_next = w.clone();
                f_next = f;
            }
            t = 1.0;
            y = w_next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &w_next + ((t - 1.0) / t_next) * (&w_next - &w);
            t = t_next;
        }
        debug_assert!(f_next <= f, "QP objective increased");
        w = w_next;
        f = f_next;
        trace.push(f);

        if iterations % 10 == 0 || iterations == opts.max_iters {
            residual = kkt_residual(a, w.as_slice());
            if residual < opts.tol {
                converged = true;
                break;
            }
            // the active-set step is cheap relative to many gradient steps once the support settles
            if residual < 1e-3 && iterations >= polished_at + 50 {
                polished_at = iterations;
                if let Some((pv, fp, rp)) = accept_polish(a, &w, f, opts.tol) {
                    w = pv;
                    if fp <= f {
                        f = fp;
                        trace.push(f);
                    }
                    residual = rp;
                    converged = true;
                    break;
                }
            }
        }
    }
    // a final exact solve on the detected support sharpens the weights
    if let Some((pv, fp, rp)) = accept_polish(a, &w, f, opts.tol) {
        w = pv;
        if fp <= f {
            trace.push(fp);
        }
        residual = rp;
    } else if !converged {
        residual = kkt_residual(a, w.as_slice());
    }
    converged = converged || residual < opts.tol;
    let mut weights: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= s);
    let objective = quad(a, &DVector::from_column_slice(&weights));
    Ok(QpSolution { weights, objective, iterations, converged, kkt_residual: residual, trace })
}

/// Optimal weights for the Stein matrix `K` and per-point log-ratios
/// `log q(x_i) − log p(x_i)`.
///
/// The QP is solved on `K̃_ij = e^{l_i − M} e^{l_j − M} K_ij` with
/// `M = max l`; the reported objective is rescaled back by `e^{2M}`.
pub fn optimal_stein_weights_log(k: &SteinMatrix, log_ratios: &[f64], opts: &QpOptions) -> Result<QpSolution> {
    let n = k.n();
    crate::error::check_dim(n, log_ratios.len())?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty Stein matrix".into()));
    }
    if let Some(i) = log_ratios.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteRatio { index: i, value: log_ratios[i] });
    }
    let m = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = log_ratios.iter().map(|l| (l - m).exp()).collect();
    let kt = DMatrix::from_fn(n, n, |i, j| r[i] * r[j] * k.get(i, j));
    if kt.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in the weighted Stein matrix".into()));
    }
    let mut sol = solve_simplex_qp(&kt, opts)?;
    sol.objective *= (2.0 * m).exp();
    Ok(sol)
}

/// Optimal weights given positive ratios `q(x_i)/p(x_i)`.
pub fn optimal_stein_weights(k: &SteinMatrix, ratios: &[f64], opts: &QpOptions) -> Result<QpSolution> {
    if let Some(i) = ratios.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidArgument(format!("ratio {i} is {}, must be finite and positive", ratios[i])));
    }
    let logs: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    optimal_stein_weights_log(k, &logs, opts)
}
