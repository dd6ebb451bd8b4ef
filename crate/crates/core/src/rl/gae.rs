//! Generalized advantage estimation, per agent along the refinement lineage
//! and for scalar team values.

use crate::mesh::RefinementMap;

use super::RlError;

/// Advantages and value targets of one episode, indexed `[step][agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeAdvantages {
    pub advantages: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Per-agent GAE for one complete episode.
///
/// The TD residual of agent `i` at step `t` bootstraps from the values of its
/// children, `d = r + γ Σ_j V_j^{t+1} − V_i^t`, and advantages accumulate over
/// the lineage tree, `A = d + γλ Σ_j A_j^{t+1}`. The last step does not
/// bootstrap. Value targets are `A + V`.
pub fn per_agent_gae(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    maps: &[RefinementMap],
    gamma: f64,
    lambda: f64,
) -> Result<EpisodeAdvantages, RlError> {
    let steps = rewards.len();
    if values.len() != steps || maps.len() != steps {
        return Err(RlError::Lineage(format!("{steps} reward steps, {} value steps, {} maps", values.len(), maps.len())));
    }
    for t in 0..steps {
        let n = rewards[t].len();
        if values[t].len() != n || maps[t].parent_count() != n {
            return Err(RlError::Lineage(format!(
                "step {t}: {n} rewards, {} values, map over {} parents",
                values[t].len(),
                maps[t].parent_count()
            )));
        }
        if t + 1 < steps && maps[t].child_count() != rewards[t + 1].len() {
            return Err(RlError::Lineage(format!(
                "step {t}: map has {} children but step {} has {} agents",
                maps[t].child_count(),
                t + 1,
                rewards[t + 1].len()
            )));
        }
    }
    let mut advantages: Vec<Vec<f64>> = vec![Vec::new(); steps];
    for t in (0..steps).rev() {
        let last = t + 1 == steps;
        advantages[t] = (0..rewards[t].len())
            .map(|i| {
                let (next_value, next_adv) = if last {
                    (0.0, 0.0)
                } else {
                    maps[t].children(i).iter().fold((0.0, 0.0), |(v, a), &j| (v + values[t + 1][j], a + advantages[t + 1][j]))
                };
                let delta = rewards[t][i] + gamma * next_value - values[t][i];
                delta + gamma * lambda * next_adv
            })
            .collect();
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a.iter().zip(v).map(|(a, v)| a + v).collect()).collect();
    Ok(EpisodeAdvantages { advantages, targets })
}

/// Standard GAE for one complete episode of scalar rewards and values.
pub fn scalar_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let steps = rewards.len();
    let mut adv = vec![0.0; steps];
    let mut next = (0.0, 0.0);
    for t in (0..steps).rev() {
        let delta = rewards[t] + gamma * next.0 - values[t];
        adv[t] = delta + gamma * lambda * next.1;
        next = (values[t], adv[t]);
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::{stream, StreamKey};
    use rand::Rng;

    /// Random lineage: every agent gets 1, 2 or 4 children while the total
    /// stays at most `max_agents`.
    pub(crate) fn random_lineage<R: Rng>(rng: &mut R, steps: usize, max_agents: usize) -> Vec<RefinementMap> {
        let mut n = rng.random_range(1..=max_agents.min(4));
        let mut maps = Vec::new();
        for _ in 0..steps {
            let mut lists = Vec::new();
            let mut next = 0;
            for i in 0..n {
                let room = max_agents - next - (n - i - 1);
                let k = [1, 2, 4][rng.random_range(0..3)];
                let k = if k <= room { k } else { 1 };
                lists.push((next..next + k).collect());
                next += k;
            }
            maps.push(RefinementMap::from_lists(&lists));
            n = next;
        }
        maps
    }

    /// Sums `(γλ)^l · d` over every descendant reached by walking the
    /// lineage one path at a time.
    pub(crate) fn brute_force(rewards: &[Vec<f64>], values: &[Vec<f64>], maps: &[RefinementMap], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
        let steps = rewards.len();
        let delta = |t: usize, i: usize| -> f64 {
            let boot: f64 = if t + 1 < steps { maps[t].children(i).iter().map(|&j| values[t + 1][j]).sum() } else { 0.0 };
            rewards[t][i] + gamma * boot - values[t][i]
        };
        fn walk(t: usize, i: usize, depth: i32, maps: &[RefinementMap], f: &dyn Fn(usize, usize, i32) -> f64) -> f64 {
            let mut s = f(t, i, depth);
            if t + 1 < maps.len() {
                for &j in maps[t].children(i) {
                    s += walk(t + 1, j, depth + 1, maps, f);
                }
            }
            s
        }
        let term = |t: usize, i: usize, depth: i32| (gamma * lambda).powi(depth) * delta(t, i);
        (0..steps).map(|t| (0..rewards[t].len()).map(|i| walk(t, i, 0, maps, &term)).collect()).collect()
    }

    fn random_episode(seed: u64, steps: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<RefinementMap>) {
        let mut rng = stream(seed, StreamKey::Test, 0);
        let maps = random_lineage(&mut rng, steps, 16);
        let mut counts: Vec<usize> = maps.iter().map(|m| m.parent_count()).collect();
        counts.truncate(steps);
        let rewards = counts.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let values = counts.iter().map(|&n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (rewards, values, maps)
    }

    #[test]
    fn matches_path_enumeration() {
        for seed in 0..300 {
            let steps = 1 + (seed as usize % 4);
            let (r, v, m) = random_episode(seed, steps);
            let got = per_agent_gae(&r, &v, &m, 0.99, 0.95).unwrap().advantages;
            let want = brute_force(&r, &v, &m, 0.99, 0.95);
            for (a, b) in got.iter().flatten().zip(want.iter().flatten()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let maps = vec![RefinementMap::identity(1), RefinementMap::identity(1)];
        let a = per_agent_gae(&[vec![0.5], vec![0.25]], &[vec![0.1], vec![0.2]], &maps, 0.9, 0.0).unwrap();
        assert!((a.advantages[0][0] - (0.5 + 0.9 * 0.2 - 0.1)).abs() < 1e-15);
        assert!((a.advantages[1][0] - (0.25 - 0.2)).abs() < 1e-15);
        assert!((a.targets[1][0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn undiscounted_lambda_one_is_lineage_return() {
        // parent splits into two children, which then stay put
        let maps = vec![RefinementMap::from_lists(&[vec![0, 1]]), RefinementMap::identity(2)];
        let rewards = vec![vec![0.6], vec![0.3, 0.1]];
        let zeros = vec![vec![0.0], vec![0.0, 0.0]];
        let a = per_agent_gae(&rewards, &zeros, &maps, 1.0, 1.0).unwrap();
        assert!((a.advantages[0][0] - 1.0).abs() < 1e-15);
        assert_eq!(a.advantages[1], vec![0.3, 0.1]);
        let returns = crate::env::lineage_returns(&rewards, &maps, 1.0);
        assert_eq!(a.advantages, returns);
    }

    #[test]
    fn inconsistent_lineage_is_rejected() {
        let maps = vec![RefinementMap::from_lists(&[vec![0, 1]]), RefinementMap::identity(3)];
        let r = vec![vec![0.0], vec![0.0, 0.0, 0.0]];
        assert!(matches!(per_agent_gae(&r, &r, &maps, 0.99, 0.95), Err(RlError::Lineage(_))));
    }

    #[test]
    fn scalar_gae_matches_per_agent_on_a_single_chain() {
        let r = [0.3, -0.2, 0.7, 0.1];
        let v = [0.5, 0.4, 0.2, -0.3];
        let (adv, tgt) = scalar_gae(&r, &v, 0.99, 0.95);
        let maps = vec![RefinementMap::identity(1); 4];
        let per = per_agent_gae(&r.map(|x| vec![x]), &v.map(|x| vec![x]), &maps, 0.99, 0.95).unwrap();
        for t in 0..4 {
            assert!((adv[t] - per.advantages[t][0]).abs() < 1e-15);
            assert!((tgt[t] - per.targets[t][0]).abs() < 1e-15);
        }
    }
}
