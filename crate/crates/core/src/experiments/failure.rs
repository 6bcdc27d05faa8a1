use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::convergence::{discrepancy, mixture_target};
use super::report::{ExperimentReport, ReportRow};
use super::sequences::{Direction, LocationScaleSequence, SequenceSet};
use crate::density::{DensityRef, GaussianDensity, MixtureDensity};
use crate::discrepancy::{gfksd_squared, halton_normal_points, ParticleMeasure};
use crate::error::{Error, Result};
use crate::kernel::ImqKernel;

const DEFAULT_SEQUENCES: &str = include_str!("../../data/sequences_failure.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// `q` much heavier-tailed than `p`.
    HeavyQ,
    /// `q` much lighter-tailed than `p`.
    LightQ,
    /// The same converging sequence across dimensions.
    Dimension,
    /// Well-separated mixture components.
    Separation,
    /// Diracs escaping to infinity, `π_n = δ(n e₁)`.
    DiracEscape,
}

impl FailureMode {
    pub fn name(&self) -> &'static str {
        match self {
            FailureMode::HeavyQ => "heavy_q",
            FailureMode::LightQ => "light_q",
            FailureMode::Dimension => "dimension",
            FailureMode::Separation => "separation",
            FailureMode::DiracEscape => "dirac_escape",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown failure mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureConfig {
    /// QMC particles per element in the 1D modes.
    pub m: usize,
    /// Halton particles per element in the dimension mode.
    pub m_dimension: usize,
    pub dims: Vec<usize>,
    /// Largest `n` for the escaping Diracs.
    pub dirac_max: usize,
    /// Variance of `p` in the escaping-Dirac mode (`q = 𝒩(0, 1)`).
    pub dirac_p_variance: f64,
    pub standardize: bool,
    /// Sequence schedules per mode; the bundled defaults when absent.
    pub heavy_q: Option<SequenceSet>,
    pub light_q: Option<SequenceSet>,
    pub dimension: Option<SequenceSet>,
    pub separation: Option<SequenceSet>,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self {
            m: 300,
            m_dimension: 1024,
            dims: vec![1, 2, 5, 10, 20, 30],
            dirac_max: 10,
            dirac_p_variance: 4.0,
            standardize: false,
            heavy_q: None,
            light_q: None,
            dimension: None,
            separation: None,
        }
    }
}

#[derive(Deserialize)]
struct DefaultSets {
    heavy_q: SequenceSet,
    light_q: SequenceSet,
    dimension: SequenceSet,
    separation: SequenceSet,
}

fn default_sets() -> DefaultSets {
    serde_json::from_str(DEFAULT_SEQUENCES).expect("bundled sequence file is valid")
}

fn gauss(mean: f64, var: f64) -> DensityRef {
    Arc::new(GaussianDensity::univariate(mean, var).expect("valid gaussian"))
}

/// The separated two-component mixture `½𝒩(−1, 0.1²) + ½𝒩(1, 0.1²)`.
pub fn separated_mixture() -> MixtureDensity {
    MixtureDensity::univariate_gaussian(&[0.5, 0.5], &[-1.0, 1.0], &[0.01, 0.01]).expect("valid mixture")
}

/// Upper bound `σ_p² e^{−γ n²}(−Δφ(0) + φ(0) n²)` on `D(δ(n))²` for
/// `q = 𝒩(0, 1)`, `p = 𝒩(0, σ_p²)`, with `γ = 1 − 1/σ_p²`.
pub fn dirac_escape_bound(kernel: &ImqKernel, p_variance: f64, n: f64) -> f64 {
    let gamma = 1.0 - 1.0 / p_variance;
    p_variance * (-gamma * n * n).exp() * (kernel.neg_laplacian_at_zero(1) + kernel.phi_at_zero() * n * n)
}

/// Runs one failure-mode scenario and records the discrepancy curves.
pub fn run_failure_modes(mode: FailureMode, config: &FailureConfig, kernel: &ImqKernel) -> Result<ExperimentReport> {
    #[derive(Serialize)]
    struct Hashed<'a> {
        experiment: &'a str,
        sigma: f64,
        beta: f64,
        config: &'a FailureConfig,
    }
    let mut report = ExperimentReport::new(
        &format!("failure_mode_{}", mode.name()),
        0,
        &Hashed { experiment: mode.name(), sigma: kernel.sigma(), beta: kernel.beta(), config },
    )?;
    let defaults = default_sets();
    let pick = |given: &Option<SequenceSet>, fallback: SequenceSet| given.clone().unwrap_or(fallback);
    let row = |id: &str, dir: Direction, n: usize, g: f64, strategy: &str, reference: Option<f64>| ReportRow {
        sequence_id: id.into(),
        direction: dir.as_str().into(),
        n,
        gfksd: g,
        strategy: strategy.into(),
        sigma: kernel.sigma(),
        beta: kernel.beta(),
        reference,
    };
    let run_1d = |report: &mut ExperimentReport, p: DensityRef, q: DensityRef, set: SequenceSet, strategy: &str| {
        for seq in set.build(&p)? {
            let base = seq.base_particles(config.m)?;
            for n in 0..seq.len() {
                let pi = seq.element(n, &base)?;
                let r = discrepancy(&p, &q, kernel, &pi, config.standardize)
                    .map_err(|e| e.context(format!("{} sequence {} n = {}", mode.name(), seq.id, n + 1)))?;
                report.push(row(&seq.id, seq.direction, n + 1, r.value, strategy, None))?;
            }
        }
        Ok::<(), Error>(())
    };
    match mode {
        FailureMode::HeavyQ => {
            let p: DensityRef = Arc::new(mixture_target());
            run_1d(&mut report, p, gauss(0.0, 2.25), pick(&config.heavy_q, defaults.heavy_q), "fixed")?;
        }
        FailureMode::LightQ => {
            run_1d(&mut report, gauss(0.0, 1.0), gauss(-0.7, 0.01), pick(&config.light_q, defaults.light_q), "fixed")?;
        }
        FailureMode::Separation => {
            let p: DensityRef = Arc::new(separated_mixture());
            run_1d(&mut report, p.clone(), p, pick(&config.separation, defaults.separation), "oracle")?;
        }
        FailureMode::Dimension => {
            let set = pick(&config.dimension, defaults.dimension);
            for &d in &config.dims {
                let p: DensityRef = Arc::new(GaussianDensity::isotropic(vec![0.0; d], 1.0)?);
                let q: DensityRef = Arc::new(GaussianDensity::isotropic(vec![0.0; d], 1.1)?);
                let base = halton_normal_points(d, config.m_dimension)?;
                for spec in &set.sequences {
                    let seq = LocationScaleSequence::new(
                        &format!("{}_d{d}", spec.id),
                        p.clone(),
                        spec.a.values(set.length)?,
                        spec.b.values(set.length)?,
                        spec.direction,
                    )?;
                    for n in 0..seq.len() {
                        let pi = seq.element(n, &base)?;
                        let r = discrepancy(&p, &q, kernel, &pi, config.standardize)?;
                        report.push(row(&seq.id, seq.direction, n + 1, r.value, "fixed", Some(d as f64)))?;
                    }
                }
            }
        }
        FailureMode::DiracEscape => {
            let q = gauss(0.0, 1.0);
            let p = gauss(0.0, config.dirac_p_variance);
            for n in 1..=config.dirac_max {
                let pi = ParticleMeasure::dirac(vec![n as f64]);
                let r = gfksd_squared(p.as_ref(), q.as_ref(), kernel, &pi)?;
                let bound = dirac_escape_bound(kernel, config.dirac_p_variance, n as f64);
                report.push(row("dirac", Direction::NonConverging, n, r.value, "fixed", Some(bound.sqrt())))?;
            }
        }
    }
    Ok(report)
}
