//! The training loop: collect, estimate advantages, update, log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crate::env::{Environment, RefinementEnv};
use crate::problems::PdeFamily;

use super::{collect_rollouts, compute_advantages, ppo_update, Adam, Agent, PpoConfig, RlError};

pub const LOG_HEADER: &str = "iteration,mean_return,policy_loss,value_loss,grad_norm,mean_final_elements";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
    pub mean_final_elements: f64,
    pub discarded_episodes: usize,
    pub skipped_updates: usize,
    pub seconds: f64,
}

impl TrainLogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.mean_return, self.policy_loss, self.value_loss, self.grad_norm, self.mean_final_elements
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub agent: Agent,
    pub log: Vec<TrainLogRow>,
    /// Set when any update was skipped for a non-finite loss.
    pub flagged: bool,
}

/// Trains on freshly sampled problems of `family`. With `out_dir`, writes
/// `train_log.csv`, `checkpoint_<iteration>.ckpt` every
/// `checkpoint_every` iterations and `final.ckpt`.
pub fn train(cfg: &PpoConfig, family: PdeFamily, seed: u64, out_dir: Option<&Path>) -> Result<TrainResult, RlError> {
    let env_cfg = cfg.env_config(family);
    train_with(cfg, seed, || RefinementEnv::new(env_cfg.clone()), cfg.flags.node_dim(), out_dir, |_| {})
}

/// Training loop over any environment; `progress` sees every log row.
pub fn train_with<E, F, P>(
    cfg: &PpoConfig,
    seed: u64,
    make_env: F,
    node_dim: usize,
    out_dir: Option<&Path>,
    mut progress: P,
) -> Result<TrainResult, RlError>
where
    E: Environment,
    F: Fn() -> E + Sync,
    P: FnMut(&TrainLogRow),
{
    cfg.validate()?;
    let mut agent = Agent::with_dims(cfg.variant, cfg.flags, node_dim, seed);
    let mut optimizers = (
        Adam::new(cfg.learning_rate, agent.policy.params.shapes()),
        Adam::new(cfg.learning_rate, agent.value.params.shapes()),
    );
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut csv = format!("{LOG_HEADER}\n");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut flagged = false;
    for iteration in 1..=cfg.iterations {
        let start = Instant::now();
        let buffer = collect_rollouts(&make_env, &mut agent, cfg.samples_per_iteration, cfg.horizon, seed, iteration)?;
        let advantages = compute_advantages(&buffer, cfg)?;
        let stats = ppo_update(&mut agent, &buffer, &advantages, cfg, &mut optimizers, seed, iteration)?;
        flagged |= stats.skipped > 0;
        let episodes = buffer.episode_returns.len().max(1) as f64;
        let row = TrainLogRow {
            iteration,
            mean_return: buffer.episode_returns.iter().sum::<f64>() / episodes,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            grad_norm: stats.grad_norm,
            mean_final_elements: buffer.final_elements.iter().sum::<usize>() as f64 / episodes,
            discarded_episodes: buffer.discarded,
            skipped_updates: stats.skipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        progress(&row);
        let _ = writeln!(csv, "{}", row.csv());
        if let Some(dir) = out_dir {
            fs::write(dir.join("train_log.csv"), &csv)?;
            if iteration % cfg.checkpoint_every == 0 {
                agent.save(&dir.join(format!("checkpoint_{iteration:04}.ckpt")))?;
            }
        }
        log.push(row);
    }
    if let Some(dir) = out_dir {
        agent.save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainResult { agent, log, flagged })
}
