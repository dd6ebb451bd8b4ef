//! Rollout collection with a frozen parameter snapshot.

use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{Environment, ObservationGraph};
use crate::mesh::{MarkVector, RefinementMap};
use crate::rng::{mix_seed, stream, StreamKey};

use super::{Agent, RlError, Variant};

/// Attempts per episode slot before an environment failure is fatal.
const MAX_ATTEMPTS: u32 = 8;
/// Guard against environments that never finish.
const MAX_EPISODE_STEPS: usize = 100_000;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn log_softmax(x: &[f64], k: usize) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().map(|v| (v - m).exp()).sum();
    x[k] - m - s.ln()
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Normalized observation the networks were evaluated on.
    pub observation: ObservationGraph,
    pub marks: Vec<bool>,
    /// The sampled element for the single-mark variant.
    pub chosen: Option<usize>,
    pub logits: Vec<f64>,
    /// Per-agent log-probabilities, or one entry for the single-mark variant.
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub team_reward: f64,
    /// Per-agent values, or one entry for a global value head.
    pub values: Vec<f64>,
    pub map: RefinementMap,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<Range<usize>>,
    /// Sum of team rewards per episode.
    pub episode_returns: Vec<f64>,
    /// Elements at the end of each episode.
    pub final_elements: Vec<usize>,
    /// Episodes discarded after an environment failure.
    pub discarded: usize,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

struct Episode {
    steps: Vec<StepRecord>,
    raw: Vec<ObservationGraph>,
    final_elements: usize,
    discarded: usize,
}

fn run_episode<E: Environment>(env: &mut E, agent: &Agent, rng: &mut crate::rng::StreamRng) -> Result<Episode, RlError> {
    let mut raw = env.reset(rng)?;
    let mut steps = Vec::new();
    let mut raws = Vec::new();
    loop {
        let observation = agent.normalizer.normalize(&raw);
        let logits = agent.logits(&observation)?;
        let values = agent.values(&observation)?;
        let n = logits.len();
        let (marks, chosen, log_probs) = if agent.variant == Variant::Argmax {
            let p = softmax(&logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = n - 1;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let mut marks = vec![false; n];
            marks[k] = true;
            (marks, Some(k), vec![log_softmax(&logits, k)])
        } else {
            let marks: Vec<bool> = logits.iter().map(|&l| rng.random::<f64>() < sigmoid(l)).collect();
            let lp = logits.iter().zip(&marks).map(|(&l, &m)| if m { log_sigmoid(l) } else { log_sigmoid(-l) }).collect();
            (marks, None, lp)
        };
        let out = env.step(&MarkVector::new(marks.clone()))?;
        raws.push(raw);
        steps.push(StepRecord {
            observation,
            marks,
            chosen,
            logits,
            log_probs,
            rewards: out.rewards,
            team_reward: out.team_reward,
            values,
            map: out.map,
            done: out.done,
        });
        raw = out.observation;
        if out.done {
            return Ok(Episode { steps, raw: raws, final_elements: env.num_agents(), discarded: 0 });
        }
        if steps.len() >= MAX_EPISODE_STEPS {
            return Err(RlError::Config(format!("episode did not finish within {MAX_EPISODE_STEPS} steps")));
        }
    }
}

/// Collects whole episodes until at least `samples` environment steps are
/// recorded. Episodes run in parallel against the frozen `agent`; each
/// episode slot draws from its own stream, so the buffer does not depend on
/// the number of worker threads. Observations are normalized with the
/// statistics from before the call; the normalizer absorbs the new raw
/// observations afterwards, in episode order.
pub fn collect_rollouts<E, F>(
    make_env: &F,
    agent: &mut Agent,
    samples: usize,
    horizon_hint: usize,
    seed: u64,
    iteration: usize,
) -> Result<RolloutBuffer, RlError>
where
    E: Environment,
    F: Fn() -> E + Sync,
{
    let base = mix_seed(seed, iteration as u64);
    let mut buffer = RolloutBuffer::default();
    let mut raws = Vec::new();
    let mut next_slot = 0u32;
    let snapshot: &Agent = agent;
    while buffer.steps.len() < samples {
        let wave = (samples - buffer.steps.len()).div_ceil(horizon_hint.max(1)) as u32;
        let episodes: Vec<Result<Episode, RlError>> = (next_slot..next_slot + wave)
            .into_par_iter()
            .map(|slot| {
                let mut last = String::new();
                for attempt in 0..MAX_ATTEMPTS {
                    let mut rng = stream(base, StreamKey::Actions, slot | (attempt << 24));
                    let mut env = make_env();
                    match run_episode(&mut env, snapshot, &mut rng) {
                        Ok(mut ep) => {
                            ep.discarded = attempt as usize;
                            return Ok(ep);
                        }
                        Err(RlError::Env(e)) => last = e.to_string(),
                        Err(e) => return Err(e),
                    }
                }
                Err(RlError::Environment { attempts: MAX_ATTEMPTS as usize, last })
            })
            .collect();
        next_slot += wave;
        for ep in episodes {
            let ep = ep?;
            let start = buffer.steps.len();
            buffer.episode_returns.push(ep.steps.iter().map(|s| s.team_reward).sum());
            buffer.final_elements.push(ep.final_elements);
            buffer.discarded += ep.discarded;
            buffer.steps.extend(ep.steps);
            buffer.episodes.push(start..buffer.steps.len());
            raws.extend(ep.raw);
        }
    }
    for raw in &raws {
        agent.normalizer.update(raw);
    }
    Ok(buffer)
}
