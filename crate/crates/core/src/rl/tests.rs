use super::ppo::{policy_terms, value_terms};
use super::*;
use crate::env::{Environment, ObservationGraph, RefinementEnv, StepOutcome};
use crate::mesh::RefinementMap;
use crate::rng::StreamRng;

/// One element, one step: +1 for marking, −1 otherwise.
struct Bandit;

fn bandit_obs() -> ObservationGraph {
    ObservationGraph {
        node_dim: 1,
        node_features: vec![1.0],
        senders: vec![],
        receivers: vec![],
        edge_features: vec![],
        global_features: vec![0.0; 3],
    }
}

impl Environment for Bandit {
    fn reset(&mut self, _rng: &mut StreamRng) -> Result<ObservationGraph, crate::env::EnvError> {
        Ok(bandit_obs())
    }

    fn step(&mut self, marks: &MarkVector) -> Result<StepOutcome, crate::env::EnvError> {
        let r = if marks.marks[0] { 1.0 } else { -1.0 };
        Ok(StepOutcome { observation: bandit_obs(), rewards: vec![r], team_reward: r, map: RefinementMap::identity(1), done: true })
    }

    fn num_agents(&self) -> usize {
        1
    }
}

fn poisson_env(cfg: &PpoConfig) -> impl Fn() -> RefinementEnv + Sync {
    let env_cfg = cfg.env_config(PdeFamily::Poisson);
    move || RefinementEnv::new(env_cfg.clone())
}

fn collect(cfg: &PpoConfig, samples: usize, seed: u64) -> (Agent, RolloutBuffer) {
    let mut agent = Agent::new(cfg.variant, cfg.flags, seed);
    let buffer = collect_rollouts(&poisson_env(cfg), &mut agent, samples, cfg.horizon, seed, 1).unwrap();
    (agent, buffer)
}

#[test]
fn four_samples_are_one_episode_with_consistent_log_probs() {
    let cfg = PpoConfig::new(Variant::Asmr, 0.05);
    let (agent, buffer) = collect(&cfg, 4, 3);
    assert_eq!(buffer.len(), 4);
    assert_eq!(buffer.episodes, vec![0..4]);
    assert!(buffer.steps[3].done && !buffer.steps[2].done);
    for s in &buffer.steps {
        assert_eq!(s.marks.len(), s.rewards.len());
        assert_eq!(s.values.len(), s.rewards.len());
        for ((l, m), lp) in s.logits.iter().zip(&s.marks).zip(&s.log_probs) {
            let p = 1.0 / (1.0 + (-l).exp());
            let want = if *m { p.ln() } else { (1.0 - p).ln() };
            assert!((lp - want).abs() < 1e-12);
        }
    }
    for w in buffer.steps.windows(2) {
        assert_eq!(w[0].map.child_count(), w[1].marks.len());
    }
    // the normalizer absorbed the four raw observations
    assert!(agent.normalizer.node.count > 4.0);
}

#[test]
fn collection_is_reproducible() {
    let cfg = PpoConfig::new(Variant::Vdqn, 0.05);
    let (a1, b1) = collect(&cfg, 8, 11);
    let (a2, b2) = collect(&cfg, 8, 11);
    assert_eq!(b1, b2);
    assert_eq!(a1.normalizer, a2.normalizer);
    assert_ne!(b1, collect(&cfg, 8, 12).1);
}

#[test]
fn argmax_marks_exactly_one_element() {
    let mut cfg = PpoConfig::new(Variant::Argmax, 0.3);
    assert_eq!(cfg.alpha, 0.0);
    cfg.horizon = 3;
    let (agent, buffer) = collect(&cfg, 3, 5);
    for s in &buffer.steps {
        assert_eq!(s.marks.iter().filter(|&&m| m).count(), 1);
        assert_eq!(s.values.len(), 1);
        assert!(s.marks[s.chosen.unwrap()]);
    }
    assert_eq!(deterministic_marks(Variant::Argmax, &[0.5, 2.0, 2.0, -1.0]).marks, vec![false, true, false, false]);
    assert_eq!(deterministic_marks(Variant::Argmax, &[0.0; 3]).marks, vec![true, false, false]);
    assert_eq!(deterministic_marks(Variant::Asmr, &[0.0, -1e-9, 3.0]).marks, vec![true, false, true]);
    let marks = agent.act(&RefinementEnv::new(cfg.env_config(PdeFamily::Poisson)).reset(&mut crate::rng::stream(0, crate::rng::StreamKey::Test, 0)).unwrap()).unwrap();
    assert_eq!(marks.count(), 1);
}

#[test]
fn vdqn_value_is_the_sum_of_agent_values() {
    let cfg = PpoConfig::new(Variant::Vdqn, 0.05);
    let (agent, buffer) = collect(&cfg, 4, 2);
    let adv = compute_advantages(&buffer, &cfg).unwrap();
    let s = &buffer.steps[3];
    let v = agent.values(&s.observation).unwrap();
    assert_eq!(v.len(), s.marks.len());
    // the final step does not bootstrap: target − A is the summed value
    let summed: f64 = s.values.iter().sum();
    assert!((adv.targets[3][0] - adv.advantages[3][0] - summed).abs() < 1e-12);
    assert!((s.team_reward - s.rewards.iter().sum::<f64>()).abs() < 1e-12);
}

#[test]
fn shared_unscaled_reward_is_the_team_reward() {
    let cfg = PpoConfig::new(Variant::Shared, 0.05);
    let (_, buffer) = collect(&cfg, 4, 9);
    for s in &buffer.steps {
        assert!(s.rewards.iter().all(|&r| (r - s.team_reward).abs() < 1e-12));
        assert_eq!(s.values.len(), 1);
    }
}

#[test]
fn hand_lineage_example() {
    let maps = vec![RefinementMap::from_lists(&[vec![0, 1]]), RefinementMap::identity(2)];
    let rewards = vec![vec![0.5], vec![1.0, 2.0]];
    let zeros = vec![vec![0.0], vec![0.0, 0.0]];
    let a = per_agent_gae(&rewards, &zeros, &maps, 0.9, 1.0).unwrap();
    assert!((a.advantages[0][0] - 3.2).abs() < 1e-12);
    let a = per_agent_gae(&rewards, &zeros, &maps, 0.9, 0.95).unwrap();
    assert!((a.advantages[0][0] - (0.5 + 0.9 * 0.95 * 3.0)).abs() < 1e-12);
}

#[test]
fn fresh_parameters_give_unit_ratios() {
    let cfg = PpoConfig::new(Variant::Asmr, 0.05);
    let (agent, buffer) = collect(&cfg, 4, 6);
    for s in &buffer.steps {
        let logits = agent.logits(&s.observation).unwrap();
        let adv: Vec<f64> = (0..logits.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let (obj, _, clipped) = policy_terms(s, &logits, &adv, Variant::Asmr, 0.2);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!((obj - mean).abs() < 1e-12);
        assert_eq!(clipped, 0);
    }
}

#[test]
fn value_loss_decreases_on_a_frozen_buffer() {
    let mut cfg = PpoConfig::new(Variant::Asmr, 0.05);
    cfg.value_clipping = false;
    cfg.epochs = 1;
    let (mut agent, buffer) = collect(&cfg, 8, 4);
    cfg.batch_size = buffer.len();
    let adv = compute_advantages(&buffer, &cfg).unwrap();
    let mut opt = (Adam::new(cfg.learning_rate, agent.policy.params.shapes()), Adam::new(cfg.learning_rate, agent.value.params.shapes()));
    let loss = |agent: &Agent| -> f64 {
        buffer
            .steps
            .iter()
            .zip(&adv.targets)
            .map(|(s, t)| value_terms(&agent.values(&s.observation).unwrap(), &s.values, t, ValueMode::PerAgent, None).0)
            .sum::<f64>()
    };
    let mut prev = loss(&agent);
    for k in 0..50 {
        ppo_update(&mut agent, &buffer, &adv, &cfg, &mut opt, 0, k).unwrap();
        let cur = loss(&agent);
        assert!(cur < prev, "update {k}: {cur} >= {prev}");
        prev = cur;
    }
}

#[test]
fn bandit_learns_to_mark() {
    let mut cfg = PpoConfig::new(Variant::Asmr, 0.0);
    cfg.iterations = 200;
    cfg.horizon = 1;
    let agent = train_with(&cfg, 0, || Bandit, 1, None, |_| {}).unwrap().agent;
    let p = sigmoid(agent.logits(&agent.normalizer.normalize(&bandit_obs())).unwrap()[0]);
    assert!(p > 0.95, "marking probability {p}");
}

#[test]
fn smoke_training_writes_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PpoConfig::new(Variant::Asmr, 0.05);
    cfg.iterations = 2;
    cfg.samples_per_iteration = 8;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.checkpoint_every = 1;
    let r = train(&cfg, PdeFamily::Laplace, 1, Some(dir.path())).unwrap();
    assert_eq!(r.log.len(), 2);
    assert!(!r.flagged);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with(LOG_HEADER));
    let loaded = Agent::load(&dir.path().join("final.ckpt"), Variant::Asmr, cfg.flags).unwrap();
    assert_eq!(loaded.policy.params, r.agent.policy.params);
    assert_eq!(loaded.value.params, r.agent.value.params);
    assert_eq!(loaded.normalizer, r.agent.normalizer);
    assert!(dir.path().join("checkpoint_0001.ckpt").exists());
    assert!(Agent::load(&dir.path().join("final.ckpt"), Variant::Shared, cfg.flags).is_err());
    // same seed, same checkpoint bytes
    let dir2 = tempfile::tempdir().unwrap();
    train(&cfg, PdeFamily::Laplace, 1, Some(dir2.path())).unwrap();
    assert_eq!(std::fs::read(dir.path().join("final.ckpt")).unwrap(), std::fs::read(dir2.path().join("final.ckpt")).unwrap());
}

#[test]
fn config_validation() {
    assert!(PpoConfig::new(Variant::Asmr, 0.05).validate().is_ok());
    let mut c = PpoConfig::new(Variant::Argmax, 0.0);
    c.alpha = 0.1;
    assert!(c.validate().is_err());
    let mut c = PpoConfig::new(Variant::Asmr, 0.05);
    c.gamma = 1.5;
    assert!(c.validate().is_err());
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()), Some(v));
    }
}
