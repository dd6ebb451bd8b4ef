//! Deterministic evaluation of a strategy over a fixed problem suite.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::env::{EnvConfig, Environment, EpisodeState, RefinementEnv, DEFAULT_INITIAL_DIAMETER};
use crate::error_metrics::{normalized_linear_error, normalized_squared_error, ReferenceSolution, EVAL_REFERENCE_DEPTH};
use crate::mesh::build_initial_mesh;
use crate::problems::{sample_eval_suite, PdeFamily, PdeProblem};
use crate::rng::{mix_seed, stream, StreamKey};

use super::strategy::{MarkingStrategy, StepView};
use super::HarnessError;

pub const RECORD_HEADER: &str = "method,sweep_value,seed,problem_id,initial_elements,final_elements,squared_error,linear_error";

/// One evaluated episode. The CSV leaves out `wall_time`, which goes to a
/// sidecar file so that repeated evaluations produce identical CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub method: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub problem_id: usize,
    pub initial_elements: usize,
    pub final_elements: usize,
    pub squared_error: f64,
    pub linear_error: f64,
    /// Seconds spent marking, refining and solving.
    pub wall_time: f64,
}

impl EvaluationRecord {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method,
            self.sweep_value,
            self.seed,
            self.problem_id,
            self.initial_elements,
            self.final_elements,
            self.squared_error,
            self.linear_error
        )
    }
}

pub fn records_csv(records: &[EvaluationRecord]) -> String {
    let mut out = format!("{RECORD_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{}", r.csv());
    }
    out
}

pub fn wall_time_csv(records: &[EvaluationRecord]) -> String {
    let mut out = String::from("method,sweep_value,seed,problem_id,wall_time\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.method, r.sweep_value, r.seed, r.problem_id, r.wall_time);
    }
    out
}

/// Path of the wall-time sidecar belonging to `csv`.
pub fn wall_time_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".walltime.csv");
    csv.with_file_name(name)
}

/// Writes the records to `path` and wall times next to it.
pub fn write_records(path: &Path, records: &[EvaluationRecord]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, records_csv(records))?;
    fs::write(wall_time_path(path), wall_time_csv(records))?;
    Ok(())
}

pub fn read_records(text: &str) -> Result<Vec<EvaluationRecord>, HarnessError> {
    let mut lines = text.lines();
    if lines.next() != Some(RECORD_HEADER) {
        return Err(HarnessError::Config("evaluation CSV has an unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || HarnessError::Config(format!("evaluation CSV row {}: `{line}`", i + 1));
            if f.len() != 8 {
                return Err(bad());
            }
            Ok(EvaluationRecord {
                method: f[0].to_string(),
                sweep_value: f[1].parse().map_err(|_| bad())?,
                seed: f[2].parse().map_err(|_| bad())?,
                problem_id: f[3].parse().map_err(|_| bad())?,
                initial_elements: f[4].parse().map_err(|_| bad())?,
                final_elements: f[5].parse().map_err(|_| bad())?,
                squared_error: f[6].parse().map_err(|_| bad())?,
                linear_error: f[7].parse().map_err(|_| bad())?,
                wall_time: 0.0,
            })
        })
        .collect()
}

/// Fixed problems with their fine reference solutions, shared read-only by
/// every method and seed.
#[derive(Debug, Clone)]
pub struct EvalSuite {
    pub family: PdeFamily,
    pub seed: u64,
    pub problems: Vec<PdeProblem>,
    pub references: Vec<Arc<ReferenceSolution>>,
    pub initial_diameter: f64,
}

impl EvalSuite {
    pub fn build(family: PdeFamily, seed: u64, count: usize) -> Result<Self, HarnessError> {
        Self::build_with(family, seed, count, DEFAULT_INITIAL_DIAMETER, EVAL_REFERENCE_DEPTH)
    }

    pub fn build_with(family: PdeFamily, seed: u64, count: usize, initial_diameter: f64, depth: usize) -> Result<Self, HarnessError> {
        let problems = sample_eval_suite(family, seed, count)?;
        let references = problems
            .par_iter()
            .map(|p| {
                let initial = build_initial_mesh(&p.geometry, initial_diameter)?;
                Ok(Arc::new(ReferenceSolution::build(p, &initial, depth)?))
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Self { family, seed, problems, references, initial_diameter })
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Final state of one evaluated episode.
pub struct EpisodeResult {
    pub record: EvaluationRecord,
    pub state: EpisodeState,
}

/// Runs `strategy` for `horizon` steps on suite problem `id`. Random choices
/// draw from a stream keyed by `(seed, id)` only.
pub fn run_episode(
    strategy: &dyn MarkingStrategy,
    suite: &EvalSuite,
    id: usize,
    horizon: usize,
    sweep_value: f64,
    seed: u64,
) -> Result<EpisodeResult, HarnessError> {
    let start = Instant::now();
    let mut cfg = EnvConfig::new(suite.family, 0.0);
    cfg.horizon = horizon;
    cfg.initial_diameter = suite.initial_diameter;
    cfg.flags = strategy.flags();
    let mut env = RefinementEnv::new(cfg);
    let mut obs = env.reset_with_problem(suite.problems[id].clone(), Some(suite.references[id].clone()))?;
    let mut rng = stream(mix_seed(seed, id as u64), StreamKey::Baseline, 0);
    for _ in 0..horizon {
        let state = env.state().expect("episode is running");
        let marks = strategy.marks(&StepView { observation: &obs, state, horizon }, &mut rng)?;
        obs = env.step(&marks)?.observation;
    }
    let state = env.state().expect("episode is running").clone();
    let fin = (&state.mesh, &state.solution);
    let init = (&state.initial_mesh, &state.initial_solution);
    let record = EvaluationRecord {
        method: strategy.name().to_string(),
        sweep_value,
        seed,
        problem_id: id,
        initial_elements: state.initial_mesh.num_elements(),
        final_elements: state.mesh.num_elements(),
        squared_error: normalized_squared_error(fin, init, &state.reference)?,
        linear_error: normalized_linear_error(fin, init, &state.reference)?,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(EpisodeResult { record, state })
}

/// One record per suite problem, in problem order.
pub fn evaluate(
    strategy: &dyn MarkingStrategy,
    suite: &EvalSuite,
    horizon: usize,
    sweep_value: f64,
    seed: u64,
) -> Result<Vec<EvaluationRecord>, HarnessError> {
    (0..suite.len())
        .into_par_iter()
        .map(|id| run_episode(strategy, suite, id, horizon, sweep_value, seed).map(|r| r.record))
        .collect()
}

/// Mean final element count and mean normalized squared error.
pub fn summarize(records: &[EvaluationRecord]) -> (f64, f64) {
    let n = records.len().max(1) as f64;
    (
        records.iter().map(|r| r.final_elements as f64).sum::<f64>() / n,
        records.iter().map(|r| r.squared_error).sum::<f64>() / n,
    )
}
