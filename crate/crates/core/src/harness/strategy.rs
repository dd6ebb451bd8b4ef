//! Marking strategies behind one trait, created by name from a registry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;

use crate::env::{EpisodeState, ObservationFlags, ObservationGraph};
use crate::mesh::MarkVector;
use crate::rl::{heuristic_policy, Agent, Variant};
use crate::rng::StreamRng;

use super::HarnessError;

/// What a strategy sees before each refinement step.
pub struct StepView<'a> {
    /// Raw (unnormalized) observation of the current mesh.
    pub observation: &'a ObservationGraph,
    pub state: &'a EpisodeState,
    pub horizon: usize,
}

impl StepView<'_> {
    pub fn num_elements(&self) -> usize {
        self.state.mesh.num_elements()
    }
}

/// A refinement method: one mark vector per step.
pub trait MarkingStrategy: Send + Sync {
    fn name(&self) -> &str;

    fn marks(&self, view: &StepView<'_>, rng: &mut StreamRng) -> Result<MarkVector, HarnessError>;

    /// Observation layout the strategy expects.
    fn flags(&self) -> ObservationFlags {
        ObservationFlags::default()
    }
}

/// Trained policy with deterministic thresholding (or argmax).
pub struct LearnedStrategy {
    pub agent: Agent,
}

impl MarkingStrategy for LearnedStrategy {
    fn name(&self) -> &str {
        self.agent.variant.name()
    }

    fn marks(&self, view: &StepView<'_>, _rng: &mut StreamRng) -> Result<MarkVector, HarnessError> {
        Ok(self.agent.act(view.observation)?)
    }

    fn flags(&self) -> ObservationFlags {
        self.agent.flags
    }
}

/// Oracle-error threshold `err > θ · max err`.
pub struct HeuristicStrategy {
    pub theta: f64,
}

impl MarkingStrategy for HeuristicStrategy {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn marks(&self, view: &StepView<'_>, _rng: &mut StreamRng) -> Result<MarkVector, HarnessError> {
        Ok(heuristic_policy(&view.state.errors, self.theta))
    }
}

/// Marks everything for the first `k` steps, nothing afterwards.
pub struct UniformStrategy {
    pub k: usize,
}

impl MarkingStrategy for UniformStrategy {
    fn name(&self) -> &str {
        "uniform"
    }

    fn marks(&self, view: &StepView<'_>, _rng: &mut StreamRng) -> Result<MarkVector, HarnessError> {
        let n = view.num_elements();
        Ok(if view.state.step < self.k { MarkVector::all(n) } else { MarkVector::none(n) })
    }
}

/// Independent Bernoulli(`p`) marks.
pub struct RandomStrategy {
    pub p: f64,
}

impl MarkingStrategy for RandomStrategy {
    fn name(&self) -> &str {
        "random"
    }

    fn marks(&self, view: &StepView<'_>, rng: &mut StreamRng) -> Result<MarkVector, HarnessError> {
        // p = 0 and p = 1 never consult the generator's outcome
        Ok(MarkVector::new((0..view.num_elements()).map(|_| rng.random::<f64>() < self.p).collect()))
    }
}

/// Everything a factory may need to build a strategy.
#[derive(Debug, Clone, Default)]
pub struct StrategyParams {
    /// α, θ, k or p, depending on the method.
    pub value: f64,
    pub horizon: usize,
    /// Trained checkpoint for learned methods.
    pub checkpoint: Option<PathBuf>,
    pub flags: ObservationFlags,
}

pub type Factory = Box<dyn Fn(&StrategyParams) -> Result<Box<dyn MarkingStrategy>, HarnessError> + Send + Sync>;

/// What the sweep value of a method means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Element penalty of a trained policy.
    Alpha,
    /// Episode length of a trained single-mark policy.
    Horizon,
    Theta,
    UniformSteps,
    Probability,
}

impl SweepKind {
    pub fn check(self, value: f64, horizon: usize) -> Result<(), String> {
        let integral = value >= 0.0 && value.fract() == 0.0;
        let ok = match self {
            SweepKind::Alpha => value >= 0.0 && value.is_finite(),
            SweepKind::Horizon => integral && value >= 1.0,
            SweepKind::Theta => (0.0..1.0).contains(&value),
            SweepKind::UniformSteps => integral && value <= horizon as f64,
            SweepKind::Probability => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{value} is not a valid {self:?} value (horizon {horizon})"))
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, SweepKind::Alpha | SweepKind::Horizon)
    }
}

struct Entry {
    kind: SweepKind,
    factory: Factory,
}

/// Strategies by name.
pub struct StrategyRegistry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

fn learned_factory(variant: Variant) -> Factory {
    Box::new(move |p: &StrategyParams| {
        let path = p.checkpoint.as_ref().ok_or_else(|| HarnessError::MissingCheckpoint(format!("no checkpoint given for {}", variant.name())))?;
        if !path.exists() {
            return Err(HarnessError::MissingCheckpoint(path.display().to_string()));
        }
        Ok(Box::new(LearnedStrategy { agent: Agent::load(path, variant, p.flags)? }) as Box<dyn MarkingStrategy>)
    })
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// The five learned variants plus heuristic, uniform and random.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        for v in Variant::ALL {
            let kind = if v == Variant::Argmax { SweepKind::Horizon } else { SweepKind::Alpha };
            r.register(v.name(), kind, learned_factory(v));
        }
        r.register("heuristic", SweepKind::Theta, Box::new(|p| Ok(Box::new(HeuristicStrategy { theta: p.value }))));
        r.register("uniform", SweepKind::UniformSteps, Box::new(|p| Ok(Box::new(UniformStrategy { k: p.value as usize }))));
        r.register("random", SweepKind::Probability, Box::new(|p| Ok(Box::new(RandomStrategy { p: p.value }))));
        r
    }

    /// Adds or replaces a method.
    pub fn register(&mut self, name: &str, kind: SweepKind, factory: Factory) {
        self.entries.insert(name.to_string(), Entry { kind, factory });
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn kind(&self, name: &str) -> Result<SweepKind, HarnessError> {
        self.entries.get(name).map(|e| e.kind).ok_or_else(|| HarnessError::UnknownMethod(name.to_string()))
    }

    pub fn create(&self, name: &str, params: &StrategyParams) -> Result<Box<dyn MarkingStrategy>, HarnessError> {
        let entry = self.entries.get(name).ok_or_else(|| HarnessError::UnknownMethod(name.to_string()))?;
        entry.kind.check(params.value, params.horizon).map_err(HarnessError::Config)?;
        (entry.factory)(params)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}
