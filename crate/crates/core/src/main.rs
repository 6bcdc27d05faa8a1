use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gfksd::density::{fit_laplace, load_samples_csv, DensityRef, GaussianDensity, LaplaceOptions, ModelSpec};
use gfksd::discrepancy::ParticleMeasure;
use gfksd::experiments::{
    default_prior, mixture_target, run_convergence_study, run_failure_modes, run_is_sweep, run_lv_demo, FailureConfig,
    FailureMode, IsSweepOptions, LotkaVolterraModel, LvData, LvDemoOptions, QStrategy, SequenceSet, StudyOptions, DEFAULT_CONVERGENCE_SEQUENCES,
};
use gfksd::kernel::ImqKernel;
use gfksd::sampling::{stein_importance_sample, EnergyReference, SisOptions, WeightedComparison};
use gfksd::varinf::{fit_transport, AffineTransport, FitOptions, TemperingSchedule};
use gfksd::{Error, Result};

#[derive(Parser)]
#[command(name = "gfksd", version, about = "Gradient-free kernel Stein discrepancy experiments")]
struct Cli {
    /// RNG seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for CSV and JSON outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discrepancy along converging and non-converging location-scale sequences.
    ConvergenceStudy {
        #[arg(long, value_enum, default_value_t = Strategy::Laplace)]
        strategy: Strategy,
        /// QMC particles per sequence element.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Scenarios where the discrepancy fails to detect (non-)convergence.
    FailureMode {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Stein importance sampling for the Lotka–Volterra posterior.
    LvDemo {
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Posterior sample used to score both weightings by energy distance.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Observations as `year,hare,lynx`; the bundled data when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Optimal Stein weights for samples from a surrogate.
    SteinIs {
        #[arg(long)]
        target: PathBuf,
        /// Model file, or `laplace` to build one from the target.
        #[arg(long)]
        surrogate: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "weights.csv")]
        out: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        no_standardize: bool,
    },
    /// Affine transport fitted by stochastic gradient descent on the discrepancy.
    SteinVi {
        #[arg(long)]
        target: PathBuf,
        /// One tempering level per row; untempered when absent.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Iterations per tempering level.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
    },
    /// Gradient-free Stein, score-based Stein and self-normalized weights for
    /// shifted and rescaled Gaussian surrogates.
    IsSweep {
        /// Repetitions per cell.
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Prior,
    Laplace,
    Gmm,
    Kde,
    Oracle,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    HeavyQ,
    LightQ,
    Dimension,
    Separation,
    DiracEscape,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct KernelConfig {
    sigma: f64,
    beta: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { sigma: 1.0, beta: 0.5 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ConvergenceConfig {
    target: Option<ModelSpec>,
    prior: Option<ModelSpec>,
    sequences: Option<SequenceSet>,
    options: StudyOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct LvConfig {
    standardize: bool,
    laplace_max_iters: usize,
    laplace_grad_tol: f64,
}

impl Default for LvConfig {
    fn default() -> Self {
        let d = LvDemoOptions::default();
        Self { standardize: d.standardize, laplace_max_iters: d.laplace.max_iters, laplace_grad_tol: d.laplace.grad_tol }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct ViConfig {
    step: f64,
    clip_norm: f64,
    batch_n: usize,
    fd_step: f64,
}

impl Default for ViConfig {
    fn default() -> Self {
        let d = FitOptions::default();
        Self { step: d.step, clip_norm: d.clip_norm, batch_n: d.batch_n, fd_step: d.fd_step }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Config {
    kernel: KernelConfig,
    convergence: ConvergenceConfig,
    failure: FailureConfig,
    lv: LvConfig,
    vi: ViConfig,
    is_sweep: IsSweepOptions,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn kernel(&self) -> Result<ImqKernel> {
        ImqKernel::new(self.kernel.sigma, self.kernel.beta).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Serialize)]
struct SisSummary {
    objective: f64,
    gfksd: f64,
    energy_distance_stein: Option<f64>,
    energy_distance_snis: Option<f64>,
    n: usize,
    seed: u64,
    qp_converged: bool,
    kkt_residual: f64,
}

impl SisSummary {
    fn new(c: &WeightedComparison, n: usize, seed: u64) -> Self {
        Self {
            objective: c.qp.objective,
            gfksd: c.gfksd,
            energy_distance_stein: c.energy_distance_stein,
            energy_distance_snis: c.energy_distance_snis,
            n,
            seed,
            qp_converged: c.qp.converged,
            kkt_residual: c.qp.kkt_residual,
        }
    }
}

#[derive(Serialize)]
struct ViSummary {
    scales: Vec<f64>,
    shifts: Vec<f64>,
    iterations: usize,
    diverged_at: Option<usize>,
    final_objective: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Reads a reference sample either as a weighted measure (with a `weight`
/// column) or as headerless rows of points.
fn load_reference(path: &Path) -> Result<EnergyReference> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let first = text.lines().next().unwrap_or("");
    let measure = if first.split(',').all(|f| f.trim().parse::<f64>().is_ok()) {
        ParticleMeasure::uniform(load_samples_csv(path)?)?
    } else {
        ParticleMeasure::read_csv(text.as_bytes())?
    };
    Ok(EnergyReference::new(measure))
}

fn load_model(path: &Path) -> Result<DensityRef> {
    ModelSpec::from_file(path)?.build()
}

fn convergence_study(cli: &Cli, cfg: &Config, strategy: Strategy, m: Option<usize>) -> Result<()> {
    let kernel = cfg.kernel()?;
    let c = &cfg.convergence;
    let target = match &c.target {
        Some(spec) => spec.build()?,
        None => Arc::new(mixture_target()),
    };
    let prior = match &c.prior {
        Some(spec) => spec.build()?,
        None => default_prior(),
    };
    let set = match &c.sequences {
        Some(s) => s.clone(),
        None => SequenceSet::from_json_str(DEFAULT_CONVERGENCE_SEQUENCES)?,
    };
    let sequences = set.build(&target)?;
    let mut opts = c.options.clone();
    opts.seed = cli.seed;
    if let Some(m) = m {
        opts.m = m;
    }
    let strategies = match strategy {
        Strategy::Prior => vec![QStrategy::Prior(prior)],
        Strategy::Laplace => vec![QStrategy::Laplace],
        Strategy::Gmm => vec![QStrategy::Gmm],
        Strategy::Kde => vec![QStrategy::Kde],
        Strategy::Oracle => vec![QStrategy::Oracle],
        Strategy::All => vec![QStrategy::Prior(prior), QStrategy::Laplace, QStrategy::Gmm, QStrategy::Kde],
    };
    for s in &strategies {
        let report = run_convergence_study(target.clone(), s, &sequences, &kernel, &opts)?;
        report.save(&cli.out_dir, &format!("convergence_{}", s.name()))?;
    }
    Ok(())
}

fn failure_mode(cli: &Cli, cfg: &Config, mode: Mode) -> Result<()> {
    let kernel = cfg.kernel()?;
    let modes = match mode {
        Mode::HeavyQ => vec![FailureMode::HeavyQ],
        Mode::LightQ => vec![FailureMode::LightQ],
        Mode::Dimension => vec![FailureMode::Dimension],
        Mode::Separation => vec![FailureMode::Separation],
        Mode::DiracEscape => vec![FailureMode::DiracEscape],
        Mode::All => vec![
            FailureMode::HeavyQ,
            FailureMode::LightQ,
            FailureMode::Dimension,
            FailureMode::Separation,
            FailureMode::DiracEscape,
        ],
    };
    for m in modes {
        let mut report = run_failure_modes(m, &cfg.failure, &kernel)?;
        report.metadata.seed = cli.seed;
        report.save(&cli.out_dir, &format!("failure_{}", m.name()))?;
    }
    Ok(())
}

fn lv_demo(cli: &Cli, cfg: &Config, n: usize, reference: Option<&Path>, data: Option<&Path>) -> Result<()> {
    let model = match data {
        Some(path) => LotkaVolterraModel::new(LvData::from_csv(path)?),
        None => LotkaVolterraModel::hudson_bay(),
    };
    let reference = reference.map(load_reference).transpose()?;
    let mut opts = LvDemoOptions { kernel: cfg.kernel()?, standardize: cfg.lv.standardize, ..Default::default() };
    opts.laplace.max_iters = cfg.lv.laplace_max_iters;
    opts.laplace.grad_tol = cfg.lv.laplace_grad_tol;
    let out = run_lv_demo(&model, n, cli.seed, reference.as_ref(), &opts)?;
    out.report.save(&cli.out_dir, "lv_demo")?;
    out.comparison.stein_weighted.write_csv(File::create(cli.out_dir.join("lv_stein_weights.csv"))?)?;
    out.comparison.snis_weighted.write_csv(File::create(cli.out_dir.join("lv_snis_weights.csv"))?)?;
    write_json(&cli.out_dir.join("lv_summary.json"), &out.summary)?;
    println!("{}", serde_json::to_string(&out.summary)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stein_is(
    cli: &Cli,
    cfg: &Config,
    target: &Path,
    surrogate: &str,
    n: usize,
    out: &Path,
    reference: Option<&Path>,
    no_standardize: bool,
) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let p = load_model(target)?;
    let q: DensityRef = if surrogate == "laplace" {
        let init = p.moments().map(|(m, _)| m).unwrap_or_else(|| vec![0.0; p.dim()]);
        Arc::new(fit_laplace(p.as_ref(), &init, &LaplaceOptions::default())?.gaussian)
    } else {
        load_model(Path::new(surrogate))?
    };
    let standardize = if no_standardize {
        None
    } else {
        let (_, cov) = q
            .moments()
            .ok_or_else(|| Error::Config("surrogate has no covariance; pass --no-standardize".into()))?;
        Some(cov)
    };
    let reference = reference.map(load_reference).transpose()?;
    let opts = SisOptions { standardize, ..Default::default() };
    let c = stein_importance_sample(p.as_ref(), &q, &cfg.kernel()?, n, cli.seed, reference.as_ref(), &opts)?;
    let out = if out.is_relative() { cli.out_dir.join(out) } else { out.to_path_buf() };
    c.stein_weighted.write_csv(File::create(&out)?)?;
    let summary = SisSummary::new(&c, n, cli.seed);
    write_json(&cli.out_dir.join("stein_is_summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn stein_vi(cli: &Cli, cfg: &Config, target: &Path, schedule: Option<&Path>, iters: usize) -> Result<()> {
    let p = load_model(target)?;
    let d = p.dim();
    let reference = GaussianDensity::isotropic(vec![0.0; d], 1.0)?;
    let p0: DensityRef = Arc::new(reference.clone());
    let schedule = match schedule {
        Some(path) => TemperingSchedule::from_csv(path, p0)?,
        None => TemperingSchedule::untempered(p0),
    };
    let opts = FitOptions {
        step: cfg.vi.step,
        clip_norm: cfg.vi.clip_norm,
        iters_per_temper: iters,
        batch_n: cfg.vi.batch_n,
        seed: cli.seed,
        fd_step: cfg.vi.fd_step,
    };
    let fit = fit_transport(p, &schedule, &reference, AffineTransport::identity(d), &cfg.kernel()?, &opts)?;

    let mut w = csv::Writer::from_path(cli.out_dir.join("stein_vi_trace.csv"))?;
    let mut header = vec!["iteration".to_string(), "epsilon".into(), "objective".into()];
    header.extend((1..=d).map(|k| format!("log_scale{k}")));
    header.extend((1..=d).map(|k| format!("shift{k}")));
    w.write_record(&header)?;
    for row in &fit.trace {
        let mut rec = vec![row.iteration.to_string(), format!("{:.17e}", row.epsilon), format!("{:.17e}", row.objective)];
        rec.extend(row.theta.iter().map(|t| format!("{t:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let summary = ViSummary {
        scales: fit.transport.scales(),
        shifts: fit.transport.shifts().to_vec(),
        iterations: fit.trace.len(),
        diverged_at: fit.diverged_at,
        final_objective: fit.trace.last().map(|r| r.objective),
    };
    write_json(&cli.out_dir.join("stein_vi_summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    if let Some(it) = fit.diverged_at {
        return Err(Error::Numeric(format!("objective diverged at iteration {it}")));
    }
    Ok(())
}

fn is_sweep(cli: &Cli, cfg: &Config, reps: Option<usize>) -> Result<()> {
    let mut opts = cfg.is_sweep.clone();
    opts.seed = cli.seed;
    if let Some(r) = reps {
        opts.reps = r;
    }
    if opts.reps == 0 || opts.ns.contains(&0) || opts.dims.contains(&0) {
        return Err(Error::Config("is-sweep needs positive reps, n and d".into()));
    }
    run_is_sweep(&cfg.kernel()?, &opts)?.save(&cli.out_dir, "is_sweep")
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    match &cli.command {
        Command::ConvergenceStudy { strategy, m } => convergence_study(cli, &cfg, *strategy, *m),
        Command::FailureMode { mode } => failure_mode(cli, &cfg, *mode),
        Command::LvDemo { n, reference, data } => lv_demo(cli, &cfg, *n, reference.as_deref(), data.as_deref()),
        Command::SteinIs { target, surrogate, n, out, reference, no_standardize } => {
            stein_is(cli, &cfg, target, surrogate, *n, out, reference.as_deref(), *no_standardize)
        }
        Command::SteinVi { target, schedule, iters } => stein_vi(cli, &cfg, target, schedule.as_deref(), *iters),
        Command::IsSweep { reps } => is_sweep(cli, &cfg, *reps),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
