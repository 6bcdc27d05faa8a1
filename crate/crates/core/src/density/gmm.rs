use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use super::{log_sum_exp, DensityRef, GaussianDensity, MixtureDensity};
use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GmmOptions {
    pub max_iters: usize,
    /// Stop once the per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            restarts: 5,
        }
    }
}

/// Outcome of BIC-driven mixture selection.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: MixtureDensity,
    pub n_components: usize,
    pub log_likelihood: f64,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// `(components, BIC)` for every candidate that produced a fit.
    pub bic: Vec<(usize, f64)>,
    /// Log-likelihood after each EM iteration of the selected run.
    pub log_likelihood_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct EmState {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

struct EmRun {
    state: EmState,
    log_likelihood: f64,
    trace: Vec<f64>,
}

/// Fits Gaussian mixtures with 1..=max_components components by EM and
/// returns the one minimizing `BIC = -2 loglik + params · ln n`.
///
/// Each component count gets `opts.restarts` k-means++ seeded runs; the run
/// with the highest log-likelihood is kept. Runs whose covariances collapse
/// below the variance floor are discarded.
pub fn fit_gmm(
    samples: &[Vec<f64>],
    max_components: usize,
    rng: &mut dyn RngCore,
    opts: &GmmOptions,
) -> Result<GmmFit> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gmm needs at least one sample".into()));
    }
    if max_components == 0 {
        return Err(Error::InvalidArgument("max_components must be >= 1".into()));
    }
    let d = samples[0].len();
    for s in samples {
        check_dim(d, s.len())?;
    }
    if n <= d * max_components {
        return Err(Error::InvalidArgument(format!(
            "gmm needs n > d·max_components ({n} <= {})",
            d * max_components
        )));
    }
    let data: Vec<DVector<f64>> = samples.iter().map(|s| DVector::from_row_slice(s)).collect();

    let mut best: Option<(f64, usize, EmRun)> = None;
    let mut bic_table = Vec::new();
    for k in 1..=max_components {
        let mut best_run: Option<EmRun> = None;
        for _ in 0..opts.restarts.max(1) {
            let init = kmeans_pp_init(&data, k, rng);
            if let Some(run) = run_em(&data, init, opts) {
                if best_run.as_ref().map_or(true, |b| run.log_likelihood > b.log_likelihood) {
                    best_run = Some(run);
                }
            }
        }
        let Some(run) = best_run else {
            if k == 1 {
                return Err(Error::Degenerate(
                    "every EM restart collapsed below the variance floor".into(),
                ));
            }
            continue;
        };
        let params = (k - 1) + k * d + k * d * (d + 1) / 2;
        let bic = -2.0 * run.log_likelihood + params as f64 * (n as f64).ln();
        bic_table.push((k, bic));
        if best.as_ref().map_or(true, |(b, _, _)| bic < *b) {
            best = Some((bic, k, run));
        }
    }
    let (_, k, run) = best.expect("k = 1 always yields a fit or an error");
    let comps = run
        .state
        .weights
        .iter()
        .zip(run.state.means.iter().zip(&run.state.covs))
        .map(|(&w, (m, c))| {
            Ok((w, Arc::new(GaussianDensity::new(m.iter().copied().collect(), c.clone())?) as DensityRef))
        })
        .collect::<Result<Vec<_>>>()?;
    // renormalize to kill rounding drift before the simplex check
    let total: f64 = comps.iter().map(|(w, _)| w).sum();
    let comps = comps.into_iter().map(|(w, c)| (w / total, c)).collect();
    Ok(GmmFit {
        mixture: MixtureDensity::new(comps)?,
        n_components: k,
        log_likelihood: run.log_likelihood,
        means: run.state.means.iter().map(|m| m.iter().copied().collect()).collect(),
        covariances: run.state.covs.clone(),
        bic: bic_table,
        log_likelihood_trace: run.trace,
    })
}

fn sq_dist(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm_squared()
}

fn kmeans_pp_init(data: &[DVector<f64>], k: usize, rng: &mut dyn RngCore) -> EmState {
    let n = data.len();
    let d = data[0].len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let dists: Vec<f64> = data
            .iter()
            .map(|x| centers.iter().map(|c| sq_dist(x, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = dists.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, dd) in dists.iter().enumerate() {
                acc += dd;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(data[next].clone());
    }
    // hard assignment to the nearest center gives the starting covariances
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, x) in data.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .unwrap();
        members[j].push(i);
    }
    let global = covariance(data, &(0..n).collect::<Vec<_>>(), &mean_of(data, &(0..n).collect::<Vec<_>>()));
    let mut covs = Vec::with_capacity(k);
    let mut weights = Vec::with_capacity(k);
    for (j, m) in members.iter().enumerate() {
        weights.push((m.len().max(1)) as f64);
        if m.len() > d {
            covs.push(covariance(data, m, &centers[j]));
        } else {
            covs.push(global.clone());
        }
    }
    let total: f64 = weights.iter().sum();
    EmState {
        weights: weights.iter().map(|w| w / total).collect(),
        means: centers,
        covs,
    }
}

fn mean_of(data: &[DVector<f64>], idx: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(data[0].len());
    for &i in idx {
        m += &data[i];
    }
    m / idx.len() as f64
}

fn covariance(data: &[DVector<f64>], idx: &[usize], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut c = DMatrix::zeros(d, d);
    for &i in idx {
        let z = &data[i] - mean;
        c += &z * z.transpose();
    }
    c / idx.len() as f64
}

/// Log-density terms `ln w_j + ln N(x_i; μ_j, Σ_j)`, or `None` if a
/// covariance has collapsed.
fn log_terms(data: &[DVector<f64>], st: &EmState) -> Option<Vec<Vec<f64>>> {
    let d = data[0].len();
    let mut per_comp = Vec::with_capacity(st.weights.len());
    for (j, cov) in st.covs.iter().enumerate() {
        if cov.diagonal().iter().any(|v| !(*v > VARIANCE_FLOOR)) {
            return None;
        }
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        // smallest eigenvalue check via the Cholesky pivots
        if l.diagonal().iter().any(|v| v * v <= VARIANCE_FLOOR) {
            return None;
        }
        let base = st.weights[j].ln() - 0.5 * (d as f64 * LN_2PI + log_det);
        let terms: Vec<f64> = data
            .iter()
            .map(|x| {
                let z = x - &st.means[j];
                let sol = l.solve_lower_triangular(&z).expect("cholesky factor is invertible");
                base - 0.5 * sol.norm_squared()
            })
            .collect();
        per_comp.push(terms);
    }
    let n = data.len();
    Some((0..n).map(|i| per_comp.iter().map(|c| c[i]).collect()).collect())
}

fn run_em(data: &[DVector<f64>], mut st: EmState, opts: &GmmOptions) -> Option<EmRun> {
    let n = data.len();
    let k = st.weights.len();
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..opts.max_iters {
        let terms = log_terms(data, &st)?;
        let mut ll = 0.0;
        let mut resp = vec![vec![0.0; k]; n];
        for (i, t) in terms.iter().enumerate() {
            let lse = log_sum_exp(t);
            ll += lse;
            for j in 0..k {
                resp[i][j] = (t[j] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        trace.push(ll);
        debug_assert!(ll >= prev - 1e-8 * ll.abs().max(1.0), "EM log-likelihood decreased");
        if (ll - prev).abs() < opts.tol * n as f64 {
            return Some(EmRun { state: st, log_likelihood: ll, trace });
        }
        prev = ll;
        // M-step
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk <= 0.0 {
                return None;
            }
            let mut mean = DVector::zeros(data[0].len());
            for (x, r) in data.iter().zip(&resp) {
                mean += x * r[j];
            }
            mean /= nk;
            let mut cov = DMatrix::zeros(mean.len(), mean.len());
            for (x, r) in data.iter().zip(&resp) {
                let z = x - &mean;
                cov += (&z * z.transpose()) * r[j];
            }
            cov /= nk;
            st.weights[j] = nk / n as f64;
            st.means[j] = mean;
            st.covs[j] = (&cov + cov.transpose()) * 0.5;
        }
    }
    let terms = log_terms(data, &st)?;
    let ll: f64 = terms.iter().map(|t| log_sum_exp(t)).sum();
    trace.push(ll);
    Some(EmRun { state: st, log_likelihood: ll, trace })
}
