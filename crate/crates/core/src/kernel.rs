//! Inverse multi-quadric kernel `k(x,y) = (σ² + ‖x−y‖²)^{−β}` and the Stein
//! kernel `k_q` built from it.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

/// Inverse multi-quadric kernel with `σ > 0` and `0 < β < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImqKernel {
    sigma: f64,
    beta: f64,
}

impl Default for ImqKernel {
    /// `σ = 1`, `β = 1/2`.
    fn default() -> Self {
        Self { sigma: 1.0, beta: 0.5 }
    }
}

/// First and mixed second derivatives of the kernel at `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDerivatives {
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    /// `∇_x · ∇_y k(x, y)`.
    pub div_grad: f64,
}

/// One evaluation of the Stein kernel, with its four summands kept apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteinKernelEval {
    pub value: f64,
    /// `∇_x·∇_y k`
    pub div_grad: f64,
    /// `⟨∇_x k, s_y⟩`
    pub grad_x_score_y: f64,
    /// `⟨∇_y k, s_x⟩`
    pub grad_y_score_x: f64,
    /// `k ⟨s_x, s_y⟩`
    pub kernel_scores: f64,
}

impl ImqKernel {
    pub fn new(sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("IMQ sigma must be positive, got {sigma}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("IMQ beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self { sigma, beta })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(x.len(), y.len())?;
        Ok((self.sigma * self.sigma + sq_dist(x, y)).powf(-self.beta))
    }

    pub fn derivatives(&self, x: &[f64], y: &[f64]) -> Result<KernelDerivatives> {
        check_dim(x.len(), y.len())?;
        let d = x.len() as f64;
        let r2 = sq_dist(x, y);
        let base = self.sigma * self.sigma + r2;
        let b = self.beta;
        let c1 = 2.0 * b * base.powf(-b - 1.0);
        let grad_x: Vec<f64> = x.iter().zip(y).map(|(a, c)| -c1 * (a - c)).collect();
        let grad_y = grad_x.iter().map(|g| -g).collect();
        let div_grad = -4.0 * b * (b + 1.0) * r2 * base.powf(-b - 2.0) + d * c1;
        Ok(KernelDerivatives { grad_x, grad_y, div_grad })
    }

    /// `k_q(x, y)` given the scores `s_x = ∇log q(x)`, `s_y = ∇log q(y)`.
    pub fn stein_kernel(&self, x: &[f64], y: &[f64], score_x: &[f64], score_y: &[f64]) -> Result<SteinKernelEval> {
        check_dim(x.len(), y.len())?;
        check_dim(x.len(), score_x.len())?;
        check_dim(x.len(), score_y.len())?;
        Ok(self.stein_kernel_unchecked(x, y, score_x, score_y))
    }

    pub(crate) fn stein_kernel_unchecked(&self, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64]) -> SteinKernelEval {
        let d = x.len() as f64;
        let b = self.beta;
        let mut r2 = 0.0;
        let mut diff_sy = 0.0; // ⟨x−y, s_y⟩
        let mut diff_sx = 0.0; // ⟨x−y, s_x⟩
        let mut sxsy = 0.0;
        for i in 0..x.len() {
            let delta = x[i] - y[i];
            r2 += delta * delta;
            diff_sy += delta * sy[i];
            diff_sx += delta * sx[i];
            sxsy += sx[i] * sy[i];
        }
        let base = self.sigma * self.sigma + r2;
        let k = base.powf(-b);
        let k1 = k / base; // base^{-β-1}
        let k2 = k1 / base; // base^{-β-2}
        let c1 = 2.0 * b * k1;
        let div_grad = -4.0 * b * (b + 1.0) * r2 * k2 + d * c1;
        let grad_x_score_y = -c1 * diff_sy;
        let grad_y_score_x = c1 * diff_sx;
        let kernel_scores = k * sxsy;
        SteinKernelEval {
            value: div_grad + grad_x_score_y + grad_y_score_x + kernel_scores,
            div_grad,
            grad_x_score_y,
            grad_y_score_x,
            kernel_scores,
        }
    }

    /// `k_q(x, x) = −Δφ(0) + φ(0)‖s‖²` with `−Δφ(0) = 2βd σ^{−2(β+1)}` and
    /// `φ(0) = σ^{−2β}`.
    pub fn stein_diagonal(&self, dim: usize, score: &[f64]) -> f64 {
        self.neg_laplacian_at_zero(dim) + self.phi_at_zero() * score.iter().map(|s| s * s).sum::<f64>()
    }

    /// `φ(0) = k(x, x) = σ^{−2β}`.
    pub fn phi_at_zero(&self) -> f64 {
        self.sigma.powf(-2.0 * self.beta)
    }

    /// `−Δφ(0) = 2βd σ^{−2(β+1)}`.
    pub fn neg_laplacian_at_zero(&self, dim: usize) -> f64 {
        2.0 * self.beta * dim as f64 * self.sigma.powf(-2.0 * (self.beta + 1.0))
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Symmetric `n×n` matrix of Stein kernel evaluations `K[i][j] = k_q(x_i, x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinMatrix(pub DMatrix<f64>);

impl SteinMatrix {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Assembles the Stein matrix over all pairs of `points`.
///
/// Only the upper triangle is evaluated and then mirrored. Rows are computed
/// in parallel; each entry is a single evaluation so the result does not
/// depend on the thread count.
pub fn stein_matrix(kernel: &ImqKernel, points: &[Vec<f64>], scores: &[Vec<f64>]) -> Result<SteinMatrix> {
    check_dim(points.len(), scores.len())?;
    let n = points.len();
    if let Some(first) = points.first() {
        let d = first.len();
        for (p, s) in points.iter().zip(scores) {
            check_dim(d, p.len())?;
            check_dim(d, s.len())?;
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| kernel.stein_kernel_unchecked(&points[i], &points[j], &scores[i], &scores[j]).value)
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(SteinMatrix(m))
}
