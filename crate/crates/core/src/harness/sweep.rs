//! Every sweep value × seed of one method: train (or reuse) when the method
//! is learned, then evaluate on the shared suite.

use std::path::PathBuf;

use rayon::prelude::*;

use crate::rl::{PpoConfig, TrainLogRow, Variant};

use super::cache::train_cached;
use super::config::ExperimentConfig;
use super::evaluate::{evaluate, write_records, EvalSuite, EvaluationRecord};
use super::strategy::{StrategyParams, StrategyRegistry, SweepKind};
use super::HarnessError;

/// Training setup for a learned method at one sweep value.
pub fn ppo_config(cfg: &ExperimentConfig, kind: SweepKind, value: f64) -> Result<PpoConfig, HarnessError> {
    let variant = Variant::parse(&cfg.method).ok_or_else(|| HarnessError::Config(format!("`{}` is not a trained method", cfg.method)))?;
    let mut ppo = PpoConfig::new(variant, if kind == SweepKind::Alpha { value } else { 0.0 });
    ppo.iterations = cfg.iterations;
    ppo.horizon = cfg.horizon_for(kind, value);
    ppo.validate()?;
    Ok(ppo)
}

/// Per-cell CSV name, e.g. `asmr_0.05_s2.csv`.
pub fn cell_file(method: &str, value: f64, seed: u64) -> String {
    format!("{method}_{value}_s{seed}.csv")
}

/// Trains and returns the checkpoint of one learned cell.
pub fn ensure_checkpoint(
    cfg: &ExperimentConfig,
    value: f64,
    seed: u64,
    progress: impl FnMut(&TrainLogRow),
) -> Result<PathBuf, HarnessError> {
    let kind = StrategyRegistry::with_defaults().kind(&cfg.method)?;
    let ppo = ppo_config(cfg, kind, value)?;
    let run = train_cached(&ppo, cfg.family, seed, &cfg.checkpoints, progress)?;
    Ok(run.dir.join("final.ckpt"))
}

/// Runs the whole sweep and writes one CSV per cell plus `<method>.csv`
/// with every record under `cfg.out`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    registry: &StrategyRegistry,
    log: &(dyn Fn(&str) + Sync),
) -> Result<Vec<EvaluationRecord>, HarnessError> {
    cfg.validate(registry)?;
    let kind = registry.kind(&cfg.method)?;
    let suite = EvalSuite::build(cfg.family, cfg.eval_suite_seed, cfg.eval_count)?;
    let cells: Vec<(f64, u64)> = cfg.sweep.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let run_cell = |&(value, seed): &(f64, u64)| -> Result<Vec<EvaluationRecord>, HarnessError> {
        let checkpoint = if kind.is_learned() {
            Some(ensure_checkpoint(cfg, value, seed, |r| {
                if r.iteration % 10 == 0 {
                    log(&format!("{} {value} seed {seed}: iteration {} return {:.4}", cfg.method, r.iteration, r.mean_return));
                }
            })?)
        } else {
            None
        };
        let horizon = cfg.horizon_for(kind, value);
        let strategy = registry.create(&cfg.method, &StrategyParams { value, horizon, checkpoint, ..Default::default() })?;
        let records = evaluate(strategy.as_ref(), &suite, horizon, value, seed)?;
        write_records(&cfg.out.join(cell_file(&cfg.method, value, seed)), &records)?;
        log(&format!("{} {value} seed {seed}: evaluated {} problems", cfg.method, records.len()));
        Ok(records)
    };
    // training already runs its episodes in parallel; baselines parallelize
    // over cells instead
    let per_cell: Vec<Vec<EvaluationRecord>> = if kind.is_learned() {
        cells.iter().map(run_cell).collect::<Result<_, _>>()?
    } else {
        cells.par_iter().map(run_cell).collect::<Result<_, _>>()?
    };
    let records: Vec<EvaluationRecord> = per_cell.into_iter().flatten().collect();
    write_records(&cfg.out.join(format!("{}.csv", cfg.method)), &records)?;
    Ok(records)
}
