//! Experiment plumbing: configuration, marking strategies selected by name,
//! evaluation over fixed problem suites, sweeps, aggregation and rendering.

mod aggregate;
mod cache;
mod config;
mod evaluate;
mod render;
mod strategy;
mod sweep;

pub use aggregate::{fit_methods, fit_power_law, fits_csv, linear_fit, scatter, scatter_csv, PowerLawFit, ScatterPoint};
pub use cache::{run_key, train_cached, CachedRun};
pub use config::{default_sweep, ExperimentConfig, Profile, DEFAULT_EVAL_SUITE_SEED};
pub use evaluate::{
    evaluate, read_records, records_csv, run_episode, summarize, wall_time_csv, wall_time_path, write_records, EpisodeResult,
    EvalSuite, EvaluationRecord, RECORD_HEADER,
};
pub use render::{render_state, RenderField};
pub use strategy::{
    Factory, HeuristicStrategy, LearnedStrategy, MarkingStrategy, RandomStrategy, StepView, StrategyParams, StrategyRegistry,
    SweepKind, UniformStrategy,
};
pub use sweep::{cell_file, ensure_checkpoint, ppo_config, run_sweep};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "SWARM_AMR_WORKERS";

use thiserror::Error;

use crate::env::EnvError;
use crate::error_metrics::MetricsError;
use crate::fem::FemError;
use crate::mesh::MeshError;
use crate::problems::ProblemError;
use crate::rl::RlError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sizes the global thread pool from `SWARM_AMR_WORKERS` when it is set.
/// Returns the number of workers in use.
pub fn configure_workers() -> Result<usize, HarnessError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.trim().parse().map_err(|_| HarnessError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(HarnessError::Config(format!("{WORKERS_ENV} must be positive")));
        }
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
