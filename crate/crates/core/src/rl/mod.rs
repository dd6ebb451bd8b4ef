//! PPO training of marking policies: per-agent lineage advantages for the
//! swarm variants, team values for the shared-reward, value-decomposition
//! and single-mark baselines, and the oracle error heuristic.

mod buffer;
mod gae;
mod heuristic;
mod normalizer;
mod ppo;
mod train;

pub use buffer::{collect_rollouts, log_sigmoid, sigmoid, softmax, RolloutBuffer, StepRecord};
pub use gae::{per_agent_gae, scalar_gae, EpisodeAdvantages};
pub use heuristic::heuristic_policy;
pub use normalizer::{RunningNormalizer, RunningStats, CLIP as NORMALIZER_CLIP};
pub use ppo::{clipped_objective, compute_advantages, ppo_update, Adam, Advantages, UpdateStats};
pub use train::{train, train_with, TrainLogRow, TrainResult, LOG_HEADER};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use thiserror::Error;

use crate::env::{EnvConfig, EnvError, ObservationFlags, ObservationGraph, RewardVariant, EDGE_DIM, GLOBAL_DIM};
use crate::graphnet::{config_hash, read_checkpoint, write_checkpoint, GraphNet, GraphNetError, Head, NetConfig};
use crate::mesh::MarkVector;
use crate::problems::PdeFamily;
use crate::rng::{stream, StreamKey};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent lineage: {0}")]
    Lineage(String),
    #[error("environment failed {attempts} times in a row: {last}")]
    Environment { attempts: usize, last: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] GraphNetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Area-scaled per-agent rewards, per-agent values, lineage advantages.
    Asmr,
    /// One broadcast team reward and a global value.
    Shared,
    /// Per-agent rewards without area scaling.
    Unscaled,
    /// Team reward against the sum of per-agent values.
    Vdqn,
    /// Exactly one element marked per step, no element penalty.
    Argmax,
}

/// How the value network is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueMode {
    PerAgent,
    Global,
    Summed,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Asmr, Variant::Shared, Variant::Unscaled, Variant::Vdqn, Variant::Argmax];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Asmr => "asmr",
            Variant::Shared => "shared",
            Variant::Unscaled => "unscaled",
            Variant::Vdqn => "vdqn",
            Variant::Argmax => "argmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn reward(self) -> RewardVariant {
        match self {
            Variant::Asmr => RewardVariant::Asmr,
            Variant::Shared => RewardVariant::Shared,
            Variant::Unscaled | Variant::Vdqn | Variant::Argmax => RewardVariant::Unscaled,
        }
    }

    pub fn value_mode(self) -> ValueMode {
        match self {
            Variant::Asmr | Variant::Unscaled => ValueMode::PerAgent,
            Variant::Shared | Variant::Argmax => ValueMode::Global,
            Variant::Vdqn => ValueMode::Summed,
        }
    }

    /// Whether training uses the team reward instead of per-agent rewards.
    pub fn team_reward(self) -> bool {
        self.value_mode() != ValueMode::PerAgent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub iterations: usize,
    /// Environment steps per iteration.
    pub samples_per_iteration: usize,
    pub epochs: usize,
    /// Environment steps per minibatch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub grad_norm_clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub alpha: f64,
    pub variant: Variant,
    /// Episode length; the single-mark baseline runs longer episodes.
    pub horizon: usize,
    pub flags: ObservationFlags,
    pub force_zero_unrefined: bool,
    pub value_clipping: bool,
    pub normalize_advantages: bool,
    pub checkpoint_every: usize,
}

impl PpoConfig {
    pub fn new(variant: Variant, alpha: f64) -> Self {
        Self {
            iterations: 500,
            samples_per_iteration: 256,
            epochs: 5,
            batch_size: 32,
            learning_rate: 3.0e-4,
            clip: 0.2,
            value_coef: 0.5,
            grad_norm_clip: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            alpha: if variant == Variant::Argmax { 0.0 } else { alpha },
            variant,
            horizon: if variant == Variant::Argmax { 20 } else { 4 },
            flags: ObservationFlags::default(),
            force_zero_unrefined: false,
            value_clipping: true,
            normalize_advantages: true,
            checkpoint_every: 50,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if self.iterations == 0 || self.samples_per_iteration == 0 || self.epochs == 0 || self.batch_size == 0 || self.horizon == 0 {
            return bad("iterations, samples, epochs, batch size and horizon must be positive");
        }
        if !(self.learning_rate > 0.0 && self.clip > 0.0 && self.value_coef > 0.0 && self.grad_norm_clip > 0.0) {
            return bad("learning rate, clip ranges and value coefficient must be positive");
        }
        if !((0.0..=1.0).contains(&self.gamma) && (0.0..=1.0).contains(&self.gae_lambda)) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a non-negative number");
        }
        if self.variant == Variant::Argmax && self.alpha != 0.0 {
            return bad("the argmax variant has no element penalty");
        }
        Ok(())
    }

    pub fn env_config(&self, family: PdeFamily) -> EnvConfig {
        let mut cfg = EnvConfig::new(family, self.alpha);
        cfg.horizon = self.horizon;
        cfg.reward = self.variant.reward();
        cfg.force_zero_unrefined = self.force_zero_unrefined;
        cfg.flags = self.flags;
        cfg
    }
}

/// Policy and value networks with their shared observation normalizer.
#[derive(Debug, Clone)]
pub struct Agent {
    pub variant: Variant,
    pub flags: ObservationFlags,
    pub policy: GraphNet,
    pub value: GraphNet,
    pub normalizer: RunningNormalizer,
}

impl Agent {
    pub fn new(variant: Variant, flags: ObservationFlags, seed: u64) -> Self {
        Self::with_dims(variant, flags, flags.node_dim(), seed)
    }

    /// Agent for observations of arbitrary node width (used by toy environments).
    pub fn with_dims(variant: Variant, flags: ObservationFlags, node_dim: usize, seed: u64) -> Self {
        let mut pc = NetConfig::new(node_dim, EDGE_DIM, GLOBAL_DIM, Head::Policy);
        let value_head = if variant.value_mode() == ValueMode::Global { Head::ValueGlobal } else { Head::ValuePerAgent };
        let mut vc = NetConfig::new(node_dim, EDGE_DIM, GLOBAL_DIM, value_head);
        pc.no_global_messages = flags.no_global_messages;
        vc.no_global_messages = flags.no_global_messages;
        let policy = GraphNet::new(pc, &mut stream(seed, StreamKey::NetworkInit, 0));
        let value = GraphNet::new(vc, &mut stream(seed, StreamKey::NetworkInit, 1));
        Self { variant, flags, policy, value, normalizer: RunningNormalizer::new(node_dim, EDGE_DIM, GLOBAL_DIM) }
    }

    pub fn describe(&self) -> String {
        format!(
            "variant={} flags={:?} policy=[{}] value=[{}]",
            self.variant.name(),
            self.flags,
            self.policy.config.describe(),
            self.value.config.describe()
        )
    }

    /// Per-node logits on an already normalized observation.
    pub fn logits(&self, obs: &ObservationGraph) -> Result<Vec<f64>, RlError> {
        Ok(self.policy.predict(obs)?)
    }

    /// Value outputs on an already normalized observation: one per agent, or
    /// a single entry for the global head.
    pub fn values(&self, obs: &ObservationGraph) -> Result<Vec<f64>, RlError> {
        Ok(self.value.predict(obs)?)
    }

    /// Deterministic marks on a raw observation: `p ≥ 0.5` per element, or
    /// the single highest-scoring element (lowest index on ties).
    pub fn act(&self, raw: &ObservationGraph) -> Result<MarkVector, RlError> {
        let logits = self.logits(&self.normalizer.normalize(raw))?;
        Ok(deterministic_marks(self.variant, &logits))
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        let mut tensors = self.policy.params.named("policy/");
        tensors.extend(self.value.params.named("value/"));
        tensors.extend(self.normalizer.to_tensors("normalizer/"));
        let w = BufWriter::new(File::create(path)?);
        write_checkpoint(w, &self.describe(), &tensors)?;
        Ok(())
    }

    /// Loads a checkpoint written by an agent of the same variant and flags.
    pub fn load(path: &Path, variant: Variant, flags: ObservationFlags) -> Result<Self, RlError> {
        let ck = read_checkpoint(BufReader::new(File::open(path)?))?;
        let mut agent = Self::new(variant, flags, 0);
        if ck.config_hash != config_hash(&agent.describe()) {
            return Err(GraphNetError::Checkpoint(format!(
                "{} was written for a different network configuration than {} with {:?}",
                path.display(),
                variant.name(),
                flags
            ))
            .into());
        }
        agent.policy.load_named("policy/", &ck.tensors)?;
        agent.value.load_named("value/", &ck.tensors)?;
        agent.normalizer.load_tensors("normalizer/", &ck.tensors).map_err(GraphNetError::Checkpoint)?;
        Ok(agent)
    }
}

/// Marks for evaluation from policy logits.
pub fn deterministic_marks(variant: Variant, logits: &[f64]) -> MarkVector {
    match variant {
        Variant::Argmax => {
            let mut marks = vec![false; logits.len()];
            if let Some(best) = argmax(logits) {
                marks[best] = true;
            }
            MarkVector::new(marks)
        }
        _ => MarkVector::new(logits.iter().map(|&l| l >= 0.0).collect()),
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        if best.is_none_or(|b| v > x[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests;
