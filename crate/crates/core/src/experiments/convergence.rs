use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{ExperimentReport, ReportRow};
use super::sequences::LocationScaleSequence;
use crate::density::{
    fit_gmm, fit_kde, fit_laplace, DensityRef, GaussianDensity, GmmOptions, LaplaceOptions, MixtureDensity,
};
use crate::discrepancy::{gfksd_squared, GfksdResult, ParticleMeasure, Standardization};
use crate::error::{Error, Result};
use crate::kernel::ImqKernel;

/// Three-component 1D mixture used throughout the convergence study.
pub fn mixture_target() -> MixtureDensity {
    MixtureDensity::univariate_gaussian(&[0.375, 0.5625, 0.0625], &[-0.4, 0.3, 0.06], &[0.04, 0.04, 0.81])
        .expect("valid mixture")
}

/// How the auxiliary density `q` is chosen.
#[derive(Debug, Clone)]
pub enum QStrategy {
    /// A fixed, caller-supplied density.
    Prior(DensityRef),
    Laplace,
    Gmm,
    Kde,
    /// `q = p`.
    Oracle,
}

impl QStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            QStrategy::Prior(_) => "prior",
            QStrategy::Laplace => "laplace",
            QStrategy::Gmm => "gmm",
            QStrategy::Kde => "kde",
            QStrategy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    /// QMC particles per sequence element.
    pub m: usize,
    pub seed: u64,
    /// Target draws used by the GMM and KDE strategies.
    pub n_target_samples: usize,
    pub gmm_max_components: usize,
    /// Evaluate in coordinates `x ↦ C⁻¹ x` with `C` the covariance of `q`.
    pub standardize: bool,
    /// Starting point of the Laplace mode search.
    pub laplace_init: Vec<f64>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            m: 300,
            seed: 0,
            n_target_samples: 100,
            gmm_max_components: 3,
            standardize: true,
            laplace_init: vec![0.0],
        }
    }
}

/// Builds `q` for the given strategy.
pub fn build_surrogate(target: &DensityRef, strategy: &QStrategy, opts: &StudyOptions) -> Result<DensityRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draws = |rng: &mut ChaCha8Rng| -> Result<Vec<Vec<f64>>> {
        (0..opts.n_target_samples).map(|_| target.sample(rng)).collect()
    };
    Ok(match strategy {
        QStrategy::Prior(q) => q.clone(),
        QStrategy::Oracle => target.clone(),
        QStrategy::Laplace => {
            let init = if opts.laplace_init.len() == target.dim() {
                opts.laplace_init.clone()
            } else {
                vec![0.0; target.dim()]
            };
            Arc::new(fit_laplace(target.as_ref(), &init, &LaplaceOptions::default())?.gaussian)
        }
        QStrategy::Gmm => {
            let x = draws(&mut rng)?;
            Arc::new(fit_gmm(&x, opts.gmm_max_components, &mut rng, &GmmOptions::default())?.mixture)
        }
        QStrategy::Kde => Arc::new(fit_kde(&draws(&mut rng)?)?),
    })
}

/// `D_{p,q}(π)²`, optionally in coordinates standardized by the covariance of `q`.
pub fn discrepancy(
    p: &DensityRef,
    q: &DensityRef,
    kernel: &ImqKernel,
    pi: &ParticleMeasure,
    standardize: bool,
) -> Result<GfksdResult> {
    if !standardize {
        return gfksd_squared(p.as_ref(), q.as_ref(), kernel, pi);
    }
    let (_, cov) = q
        .moments()
        .ok_or_else(|| Error::Unsupported("standardization needs the covariance of q".into()))?;
    let s = Standardization::new(cov)?;
    gfksd_squared(&s.wrap(p.clone())?, &s.wrap(q.clone())?, kernel, &s.map_measure(pi)?)
}

#[derive(Serialize)]
struct StudyConfig<'a> {
    experiment: &'a str,
    strategy: &'a str,
    sigma: f64,
    beta: f64,
    options: &'a StudyOptions,
    sequences: Vec<(&'a str, &'a str, &'a [f64], &'a [f64])>,
}

/// Evaluates the discrepancy along each sequence for one choice of `q`.
pub fn run_convergence_study(
    target: DensityRef,
    strategy: &QStrategy,
    sequences: &[LocationScaleSequence],
    kernel: &ImqKernel,
    opts: &StudyOptions,
) -> Result<ExperimentReport> {
    if target.dim() != 1 {
        return Err(Error::InvalidArgument("the convergence study needs a 1D target".into()));
    }
    let config = StudyConfig {
        experiment: "convergence_study",
        strategy: strategy.name(),
        sigma: kernel.sigma(),
        beta: kernel.beta(),
        options: opts,
        sequences: sequences
            .iter()
            .map(|s| (s.id.as_str(), s.direction.as_str(), s.a.as_slice(), s.b.as_slice()))
            .collect(),
    };
    let mut report = ExperimentReport::new("convergence_study", opts.seed, &config)?;
    let q = build_surrogate(&target, strategy, opts).map_err(|e| e.context(format!("strategy {}", strategy.name())))?;
    for seq in sequences {
        let base = seq.base_particles(opts.m)?;
        for n in 0..seq.len() {
            let tag = || format!("strategy {}, sequence {}, n = {}", strategy.name(), seq.id, n + 1);
            let pi = seq.element(n, &base).map_err(|e| e.context(tag()))?;
            let r = discrepancy(&target, &q, kernel, &pi, opts.standardize).map_err(|e| e.context(tag()))?;
            report.push(ReportRow {
                sequence_id: seq.id.clone(),
                direction: seq.direction.as_str().into(),
                n: n + 1,
                gfksd: r.value,
                strategy: strategy.name().into(),
                sigma: kernel.sigma(),
                beta: kernel.beta(),
                reference: None,
            })?;
        }
    }
    Ok(report)
}

/// Default prior for the mixture target, `𝒩(0, 0.75²)`.
pub fn default_prior() -> DensityRef {
    Arc::new(GaussianDensity::univariate(0.0, 0.5625).expect("valid gaussian"))
}
