//! Reproducible experiment drivers: convergence detection along
//! location–scale sequences, failure-mode scenarios, the Lotka–Volterra
//! importance-sampling demo and a Gaussian importance-sampling sweep.

mod convergence;
mod failure;
mod is_sweep;
mod lv;
mod lv_demo;
mod mcmc;
pub mod ode;
mod report;
mod sequences;

pub use convergence::{
    build_surrogate, default_prior, discrepancy, mixture_target, run_convergence_study, QStrategy, StudyOptions,
};
pub use failure::{dirac_escape_bound, run_failure_modes, separated_mixture, FailureConfig, FailureMode};
pub use is_sweep::{run_is_sweep, IsSweepOptions, IsSweepReport, IsSweepRow, SweepRegime};
pub use lv::{
    integrate_lv, lv_first_integral, lv_log_posterior, lv_rhs, LotkaVolterraModel, LvData, LvLogPosterior, LvParams,
    LV_PARAM_NAMES,
};
pub use lv_demo::{lv_laplace, run_lv_demo, run_lv_demo_with, LvDemoOptions, LvDemoOutput, LvSummary};
pub use mcmc::{random_walk_metropolis, MetropolisOptions, MetropolisOutput};
pub use report::{config_hash, ExperimentReport, ReportMetadata, ReportRow};
pub use sequences::{Direction, LocationScaleSequence, ScheduleSpec, SequenceSet, SequenceSpec};

/// Location–scale schedules bundled for the convergence study.
pub const DEFAULT_CONVERGENCE_SEQUENCES: &str = include_str!("../../data/sequences_convergence.json");
