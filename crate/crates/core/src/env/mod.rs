//! The refinement environment: every element is an agent, the joint action
//! is a mark vector, and each agent is rewarded for the error its marking
//! removed minus a penalty per element it created.

mod observation;
mod reward;

pub use observation::{build_observation, ObservationFlags, ObservationGraph, EDGE_DIM, GLOBAL_DIM};
pub use reward::{compute_rewards, lineage_returns, RewardVariant};

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::error_metrics::{raw_element_errors, ElementErrors, MetricsError, ReferenceSolution, TRAIN_REFERENCE_DEPTH};
use crate::fem::{solve_problem, FemError, Solution};
use crate::mesh::{build_initial_mesh, refine, write_mesh_text, MarkVector, MeshError, RefinementMap, TriMesh};
use crate::problems::{sample_problem, PdeFamily, PdeProblem, ProblemError};
use crate::rng::StreamRng;

/// Largest element diameter of the initial meshes (about 20–50 elements).
pub const DEFAULT_INITIAL_DIAMETER: f64 = 0.4;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode aborted: {0}")]
    Aborted(String),
    #[error("step called on a finished or unstarted episode")]
    NotRunning,
    #[error("mark vector has {marks} entries for {agents} agents")]
    MarkLength { marks: usize, agents: usize },
    #[error("no usable problem after {0} attempts")]
    ResampleLimit(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<FemError> for EnvError {
    fn from(e: FemError) -> Self {
        EnvError::Aborted(e.to_string())
    }
}

impl From<MeshError> for EnvError {
    fn from(e: MeshError) -> Self {
        EnvError::Aborted(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub family: PdeFamily,
    pub initial_diameter: f64,
    /// Steps per episode.
    pub horizon: usize,
    pub alpha: f64,
    pub reward: RewardVariant,
    /// Zero the reward of every agent that was not refined.
    pub force_zero_unrefined: bool,
    pub reference_depth: usize,
    pub flags: ObservationFlags,
    /// Problems sampled per reset before giving up on degenerate draws.
    pub max_resamples: usize,
}

impl EnvConfig {
    pub fn new(family: PdeFamily, alpha: f64) -> Self {
        Self {
            family,
            initial_diameter: DEFAULT_INITIAL_DIAMETER,
            horizon: 4,
            alpha,
            reward: RewardVariant::Asmr,
            force_zero_unrefined: false,
            reference_depth: TRAIN_REFERENCE_DEPTH,
            flags: ObservationFlags::default(),
            max_resamples: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub problem: PdeProblem,
    pub initial_mesh: TriMesh,
    pub initial_solution: Solution,
    pub mesh: TriMesh,
    pub solution: Solution,
    pub errors: ElementErrors,
    pub reference: Arc<ReferenceSolution>,
    pub step: usize,
    pub initial_total_error: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: ObservationGraph,
    /// One reward per pre-step element.
    pub rewards: Vec<f64>,
    /// Sum of the unscaled per-agent rewards (penalty included).
    pub team_reward: f64,
    pub map: RefinementMap,
    pub done: bool,
}

/// What a trainer needs from an environment.
pub trait Environment {
    fn reset(&mut self, rng: &mut StreamRng) -> Result<ObservationGraph, EnvError>;
    fn step(&mut self, marks: &MarkVector) -> Result<StepOutcome, EnvError>;
    fn num_agents(&self) -> usize;
}

/// Mesh/solution records and rewards of one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub meshes: Vec<String>,
    pub rewards: Vec<Vec<f64>>,
}

impl EpisodeTrace {
    /// `step,element,reward` rows.
    pub fn rewards_csv(&self) -> String {
        let mut out = String::from("step,element,reward\n");
        for (t, rs) in self.rewards.iter().enumerate() {
            for (i, r) in rs.iter().enumerate() {
                let _ = writeln!(out, "{t},{i},{r:?}");
            }
        }
        out
    }

    /// Writes `step_<t>.mesh` files and `rewards.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (t, m) in self.meshes.iter().enumerate() {
            std::fs::write(dir.join(format!("step_{t}.mesh")), m)?;
        }
        std::fs::write(dir.join("rewards.csv"), self.rewards_csv())
    }
}

#[derive(Debug, Clone)]
pub struct RefinementEnv {
    pub config: EnvConfig,
    state: Option<EpisodeState>,
    trace: Option<EpisodeTrace>,
}

impl RefinementEnv {
    pub fn new(config: EnvConfig) -> Self {
        Self { config, state: None, trace: None }
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    /// Starts recording a trace at every reset.
    pub fn enable_trace(&mut self) {
        self.trace = Some(EpisodeTrace::default());
    }

    pub fn trace(&self) -> Option<&EpisodeTrace> {
        self.trace.as_ref()
    }

    /// Starts an episode on `problem`, reusing `reference` when given (it must
    /// belong to the same problem and initial mesh).
    pub fn reset_with_problem(
        &mut self,
        problem: PdeProblem,
        reference: Option<Arc<ReferenceSolution>>,
    ) -> Result<ObservationGraph, EnvError> {
        self.state = None;
        let initial_mesh = build_initial_mesh(&problem.geometry, self.config.initial_diameter)?;
        let reference = match reference {
            Some(r) => r,
            None => Arc::new(ReferenceSolution::build(&problem, &initial_mesh, self.config.reference_depth)?),
        };
        let solution = solve_problem(&problem, &initial_mesh)?;
        let raw = raw_element_errors(&initial_mesh, &solution, &reference)?;
        let total: f64 = raw.iter().sum();
        let errors = ElementErrors::new(raw, total)?;
        let state = EpisodeState {
            problem,
            initial_mesh: initial_mesh.clone(),
            initial_solution: solution.clone(),
            mesh: initial_mesh,
            solution,
            errors,
            reference,
            step: 0,
            initial_total_error: total,
        };
        if let Some(trace) = &mut self.trace {
            *trace = EpisodeTrace { meshes: vec![write_mesh_text(&state.mesh, Some(&state.solution.values))], rewards: Vec::new() };
        }
        let obs = self.observe(&state);
        self.state = Some(state);
        Ok(obs)
    }

    fn observe(&self, state: &EpisodeState) -> ObservationGraph {
        build_observation(&state.mesh, &state.solution, &state.problem, state.step, self.config.flags)
    }

    pub fn observation(&self) -> Option<ObservationGraph> {
        self.state.as_ref().map(|s| self.observe(s))
    }
}

impl Environment for RefinementEnv {
    /// Samples problems until one has a non-degenerate initial error.
    fn reset(&mut self, rng: &mut StreamRng) -> Result<ObservationGraph, EnvError> {
        for _ in 0..self.config.max_resamples {
            let problem = sample_problem(self.config.family, rng.random())?;
            match self.reset_with_problem(problem, None) {
                Err(EnvError::Metrics(MetricsError::Degenerate(_))) => continue,
                other => return other,
            }
        }
        Err(EnvError::ResampleLimit(self.config.max_resamples))
    }

    fn step(&mut self, marks: &MarkVector) -> Result<StepOutcome, EnvError> {
        let state = match &self.state {
            Some(s) if s.step < self.config.horizon => s,
            _ => return Err(EnvError::NotRunning),
        };
        if marks.len() != state.mesh.num_elements() {
            return Err(EnvError::MarkLength { marks: marks.len(), agents: state.mesh.num_elements() });
        }
        let (mesh, map) = refine(&state.mesh, marks)?;
        let solution = solve_problem(&state.problem, &mesh)?;
        let raw = raw_element_errors(&mesh, &solution, &state.reference)?;
        let errors = ElementErrors::new(raw, state.initial_total_error)?;
        let areas: Vec<f64> = (0..state.mesh.num_elements()).map(|e| state.mesh.element_area(e)).collect();
        let cfg = &self.config;
        let mut rewards = compute_rewards(&state.errors.normalized, &errors.normalized, &map, &areas, cfg.alpha, cfg.reward);
        let mut unscaled =
            compute_rewards(&state.errors.normalized, &errors.normalized, &map, &areas, cfg.alpha, RewardVariant::Unscaled);
        if cfg.force_zero_unrefined {
            for i in 0..rewards.len() {
                if map.children(i).len() == 1 {
                    unscaled[i] = 0.0;
                    if cfg.reward != RewardVariant::Shared {
                        rewards[i] = 0.0;
                    }
                }
            }
            if cfg.reward == RewardVariant::Shared {
                let total: f64 = unscaled.iter().sum();
                rewards.iter_mut().for_each(|r| *r = total);
            }
        }
        let team_reward = unscaled.iter().sum();
        let state = self.state.as_mut().expect("checked above");
        state.mesh = mesh;
        state.solution = solution;
        state.errors = errors;
        state.step += 1;
        let done = state.step == cfg.horizon;
        if let Some(trace) = &mut self.trace {
            trace.meshes.push(write_mesh_text(&state.mesh, Some(&state.solution.values)));
            trace.rewards.push(rewards.clone());
        }
        let state = self.state.as_ref().expect("set above");
        Ok(StepOutcome { observation: self.observe(state), rewards, team_reward, map, done })
    }

    fn num_agents(&self) -> usize {
        self.state.as_ref().map_or(0, |s| s.mesh.num_elements())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKey};

    fn env(family: PdeFamily) -> RefinementEnv {
        RefinementEnv::new(EnvConfig::new(family, 0.01))
    }

    #[test]
    fn reset_is_deterministic_and_normalized() {
        let problem = sample_problem(PdeFamily::Poisson, 21).unwrap();
        let mut e = env(PdeFamily::Poisson);
        let a = e.reset_with_problem(problem.clone(), None).unwrap();
        let s = e.state().unwrap();
        assert_eq!(s.reference.mesh.num_elements(), 256 * s.initial_mesh.num_elements());
        assert!((s.errors.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let b = e.reset_with_problem(problem, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_meshes_are_coarse() {
        for family in [PdeFamily::Laplace, PdeFamily::Poisson] {
            for seed in 0..50 {
                let p = sample_problem(family, seed).unwrap();
                let n = build_initial_mesh(&p.geometry, DEFAULT_INITIAL_DIAMETER).unwrap().num_elements();
                assert!((16..=64).contains(&n), "{family:?} seed {seed}: {n} elements");
            }
        }
    }

    #[test]
    fn episode_runs_exactly_horizon_steps() {
        let mut e = env(PdeFamily::Laplace);
        let mut rng = stream(0, StreamKey::Test, 0);
        e.reset(&mut rng).unwrap();
        for t in 0..4 {
            let n = e.num_agents();
            let out = e.step(&MarkVector::new((0..n).map(|i| i % 3 == 0).collect())).unwrap();
            assert_eq!(out.rewards.len(), n);
            assert_eq!(out.map.parent_count(), n);
            assert_eq!(out.done, t == 3);
        }
        assert!(matches!(e.step(&MarkVector::none(e.num_agents())), Err(EnvError::NotRunning)));
    }

    #[test]
    fn no_marks_means_zero_reward() {
        let mut e = env(PdeFamily::Poisson);
        e.reset_with_problem(sample_problem(PdeFamily::Poisson, 2).unwrap(), None).unwrap();
        let out = e.step(&MarkVector::none(e.num_agents())).unwrap();
        assert!(out.rewards.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn all_marks_pay_three_alpha() {
        let mut cfg = EnvConfig::new(PdeFamily::Poisson, 0.01);
        cfg.reward = RewardVariant::Unscaled;
        let mut e = RefinementEnv::new(cfg);
        e.reset_with_problem(sample_problem(PdeFamily::Poisson, 2).unwrap(), None).unwrap();
        let n = e.num_agents();
        let before = e.state().unwrap().errors.normalized.clone();
        let out = e.step(&MarkVector::all(n)).unwrap();
        assert_eq!(e.num_agents(), 4 * n);
        let after = &e.state().unwrap().errors.normalized;
        for i in 0..n {
            let drop: f64 = before[i] - out.map.children(i).iter().map(|&j| after[j]).sum::<f64>();
            assert!((out.rewards[i] - (drop - 0.03)).abs() < 1e-12);
        }
    }

    #[test]
    fn force_zero_unrefined_switch() {
        let mut cfg = EnvConfig::new(PdeFamily::Laplace, 0.01);
        cfg.force_zero_unrefined = true;
        let mut e = RefinementEnv::new(cfg);
        e.reset_with_problem(sample_problem(PdeFamily::Laplace, 5).unwrap(), None).unwrap();
        let mut marks = MarkVector::none(e.num_agents());
        marks.marks[0] = true;
        let out = e.step(&marks).unwrap();
        for i in 0..out.rewards.len() {
            if out.map.children(i).len() == 1 {
                assert_eq!(out.rewards[i], 0.0);
            }
        }
    }

    #[test]
    fn trace_export() {
        let mut e = env(PdeFamily::Laplace);
        e.enable_trace();
        e.reset_with_problem(sample_problem(PdeFamily::Laplace, 1).unwrap(), None).unwrap();
        e.step(&MarkVector::all(e.num_agents())).unwrap();
        let trace = e.trace().unwrap();
        assert_eq!(trace.meshes.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        trace.write_to(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + trace.rewards[0].len());
        let (mesh, u) = crate::mesh::read_mesh_text(&std::fs::read_to_string(dir.path().join("step_1.mesh")).unwrap()).unwrap();
        assert_eq!(mesh.num_vertices(), u.unwrap().len());
    }
}
