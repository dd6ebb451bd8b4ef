//! Clipped-surrogate updates with analytic loss gradients seeded into the
//! network tapes.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::graphnet::{GraphNet, Matrix};
use crate::rng::{mix_seed, stream, StreamKey};

use super::buffer::{log_sigmoid, log_softmax, sigmoid, softmax};
use super::gae::{per_agent_gae, scalar_gae};
use super::{Agent, PpoConfig, RlError, RolloutBuffer, StepRecord, ValueMode, Variant};

/// Adam with PPO's customary epsilon.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: impl Iterator<Item = (usize, usize)>) -> Self {
        let m: Vec<Matrix> = shapes.map(|(r, c)| Matrix::zeros(r, c)).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-5, t: 0, v: m.clone(), m }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Advantages and value targets per step: one entry per agent, or a single
/// entry when the variant learns from the team reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    pub advantages: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// The scalar a team-value variant assigns to a step.
fn team_value(mode: ValueMode, values: &[f64]) -> f64 {
    match mode {
        ValueMode::Summed => values.iter().sum(),
        _ => values[0],
    }
}

pub fn compute_advantages(buffer: &RolloutBuffer, cfg: &PpoConfig) -> Result<Advantages, RlError> {
    let mode = cfg.variant.value_mode();
    let mut out = Advantages { advantages: Vec::with_capacity(buffer.len()), targets: Vec::with_capacity(buffer.len()) };
    for ep in &buffer.episodes {
        let steps = &buffer.steps[ep.clone()];
        if mode == ValueMode::PerAgent {
            let rewards: Vec<Vec<f64>> = steps.iter().map(|s| s.rewards.clone()).collect();
            let values: Vec<Vec<f64>> = steps.iter().map(|s| s.values.clone()).collect();
            let maps: Vec<_> = steps.iter().map(|s| s.map.clone()).collect();
            let a = per_agent_gae(&rewards, &values, &maps, cfg.gamma, cfg.gae_lambda)?;
            out.advantages.extend(a.advantages);
            out.targets.extend(a.targets);
        } else {
            let rewards: Vec<f64> = steps.iter().map(|s| s.team_reward).collect();
            let values: Vec<f64> = steps.iter().map(|s| team_value(mode, &s.values)).collect();
            let (a, t) = scalar_gae(&rewards, &values, cfg.gamma, cfg.gae_lambda);
            out.advantages.extend(a.into_iter().map(|x| vec![x]));
            out.targets.extend(t.into_iter().map(|x| vec![x]));
        }
    }
    Ok(out)
}

/// Mean 0, standard deviation 1 over every advantage entry.
fn normalized(adv: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = adv.iter().map(Vec::len).sum::<usize>() as f64;
    if n == 0.0 {
        return adv.to_vec();
    }
    let mean = adv.iter().flatten().sum::<f64>() / n;
    let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    adv.iter().map(|a| a.iter().map(|x| (x - mean) / sd).collect()).collect()
}

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_objective(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// Whether the gradient flows through the ratio.
fn ratio_active(ratio: f64, adv: f64, clip: f64) -> bool {
    !((adv > 0.0 && ratio > 1.0 + clip) || (adv < 0.0 && ratio < 1.0 - clip))
}

/// Objective of one step and its derivative with respect to the logits.
pub(super) fn policy_terms(step: &StepRecord, logits: &[f64], adv: &[f64], variant: Variant, clip: f64) -> (f64, Vec<f64>, usize) {
    let mut clipped = 0;
    if variant == Variant::Argmax {
        let k = step.chosen.expect("single-mark steps record their choice");
        let p = softmax(logits);
        let logp = log_softmax(logits, k);
        let r = (logp - step.log_probs[0]).exp();
        let a = adv[0];
        let obj = clipped_objective(r, a, clip);
        let mut d = vec![0.0; logits.len()];
        if ratio_active(r, a, clip) {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = a * r * ((j == k) as u8 as f64 - p[j]);
            }
        } else {
            clipped = 1;
        }
        return (obj, d, clipped);
    }
    let n = logits.len() as f64;
    let mut obj = 0.0;
    let mut d = vec![0.0; logits.len()];
    for i in 0..logits.len() {
        let l = logits[i];
        let m = step.marks[i];
        let logp = if m { log_sigmoid(l) } else { log_sigmoid(-l) };
        let r = (logp - step.log_probs[i]).exp();
        let a = if adv.len() == 1 { adv[0] } else { adv[i] };
        obj += clipped_objective(r, a, clip) / n;
        if ratio_active(r, a, clip) {
            d[i] = a * r * (m as u8 as f64 - sigmoid(l)) / n;
        } else {
            clipped += 1;
        }
    }
    (obj, d, clipped)
}

/// Value loss of one step and its derivative with respect to the outputs.
pub(super) fn value_terms(outputs: &[f64], old: &[f64], targets: &[f64], mode: ValueMode, clip: Option<f64>) -> (f64, Vec<f64>) {
    let term = |v: f64, v_old: f64, target: f64| -> (f64, f64) {
        let plain = (v - target).powi(2);
        match clip {
            Some(c) => {
                let vc = v_old + (v - v_old).clamp(-c, c);
                let clipped = (vc - target).powi(2);
                if plain >= clipped {
                    (plain, 2.0 * (v - target))
                } else if (v - v_old).abs() < c {
                    (clipped, 2.0 * (vc - target))
                } else {
                    (clipped, 0.0)
                }
            }
            None => (plain, 2.0 * (v - target)),
        }
    };
    match mode {
        ValueMode::PerAgent => {
            let n = outputs.len() as f64;
            let mut loss = 0.0;
            let mut d = Vec::with_capacity(outputs.len());
            for i in 0..outputs.len() {
                let (l, g) = term(outputs[i], old[i], targets[i]);
                loss += l / n;
                d.push(g / n);
            }
            (loss, d)
        }
        ValueMode::Global => {
            let (l, g) = term(outputs[0], old[0], targets[0]);
            (l, vec![g])
        }
        ValueMode::Summed => {
            let (l, g) = term(outputs.iter().sum(), old.iter().sum(), targets[0]);
            (l, vec![g; outputs.len()])
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub updates: usize,
    /// Minibatches skipped for non-finite losses or gradients.
    pub skipped: usize,
}

struct StepGrad {
    policy_loss: f64,
    value_loss: f64,
    clipped: usize,
    agents: usize,
    policy: Vec<Matrix>,
    value: Vec<Matrix>,
}

fn step_gradients(agent: &Agent, step: &StepRecord, adv: &[f64], target: &[f64], cfg: &PpoConfig) -> Result<StepGrad, RlError> {
    let mut policy_obj = 0.0;
    let mut clipped = 0;
    let (_, policy) = agent.policy.gradients_with(&step.observation, |logits| {
        let (obj, d, c) = policy_terms(step, logits, adv, cfg.variant, cfg.clip);
        policy_obj = obj;
        clipped = c;
        d.into_iter().map(|x| -x).collect()
    })?;
    let mode = cfg.variant.value_mode();
    let clip = cfg.value_clipping.then_some(cfg.clip);
    let mut value_loss = 0.0;
    let (_, value) = agent.value.gradients_with(&step.observation, |out| {
        let (l, d) = value_terms(out, &step.values, target, mode, clip);
        value_loss = l;
        d.into_iter().map(|x| cfg.value_coef * x).collect()
    })?;
    let agents = if cfg.variant == Variant::Argmax { 1 } else { step.marks.len() };
    Ok(StepGrad { policy_loss: -policy_obj, value_loss, clipped, agents, policy, value })
}

fn zeros_like(net: &GraphNet) -> Vec<Matrix> {
    net.params.shapes().map(|(r, c)| Matrix::zeros(r, c)).collect()
}

/// Runs the configured epochs of minibatch updates over one buffer.
pub fn ppo_update(
    agent: &mut Agent,
    buffer: &RolloutBuffer,
    advantages: &Advantages,
    cfg: &PpoConfig,
    optimizers: &mut (Adam, Adam),
    seed: u64,
    iteration: usize,
) -> Result<UpdateStats, RlError> {
    let adv = if cfg.normalize_advantages { normalized(&advantages.advantages) } else { advantages.advantages.clone() };
    let mut stats = UpdateStats::default();
    let (mut clipped, mut agents) = (0usize, 0usize);
    let base = mix_seed(seed, iteration as u64);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(base, StreamKey::Minibatches, epoch as u32));
        for batch in order.chunks(cfg.batch_size) {
            let snapshot: &Agent = agent;
            let grads: Vec<Result<StepGrad, RlError>> = batch
                .par_iter()
                .map(|&t| step_gradients(snapshot, &buffer.steps[t], &adv[t], &advantages.targets[t], cfg))
                .collect();
            let b = batch.len() as f64;
            let mut gp = zeros_like(&agent.policy);
            let mut gv = zeros_like(&agent.value);
            let (mut pl, mut vl) = (0.0, 0.0);
            let (mut bc, mut ba) = (0, 0);
            for g in grads {
                let g = g?;
                pl += g.policy_loss / b;
                vl += g.value_loss / b;
                bc += g.clipped;
                ba += g.agents;
                gp.iter_mut().zip(&g.policy).for_each(|(a, x)| a.add_assign(x));
                gv.iter_mut().zip(&g.value).for_each(|(a, x)| a.add_assign(x));
            }
            for m in gp.iter_mut().chain(gv.iter_mut()) {
                m.data.iter_mut().for_each(|x| *x /= b);
            }
            let norm = gp.iter().chain(&gv).flat_map(|m| &m.data).map(|x| x * x).sum::<f64>().sqrt();
            if !(pl.is_finite() && vl.is_finite() && norm.is_finite()) {
                stats.skipped += 1;
                continue;
            }
            if norm > cfg.grad_norm_clip {
                let s = cfg.grad_norm_clip / norm;
                for m in gp.iter_mut().chain(gv.iter_mut()) {
                    m.data.iter_mut().for_each(|x| *x *= s);
                }
            }
            optimizers.0.step(&mut agent.policy.params.values, &gp);
            optimizers.1.step(&mut agent.value.params.values, &gv);
            stats.policy_loss += pl;
            stats.value_loss += vl;
            stats.grad_norm += norm;
            stats.updates += 1;
            clipped += bc;
            agents += ba;
        }
    }
    if stats.updates > 0 {
        let u = stats.updates as f64;
        stats.policy_loss /= u;
        stats.value_loss /= u;
        stats.grad_norm /= u;
    }
    stats.clip_fraction = if agents > 0 { clipped as f64 / agents as f64 } else { 0.0 };
    Ok(stats)
}
