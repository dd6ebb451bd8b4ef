use crate::mesh::RefinementMap;

/// How per-element error drops turn into agent rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardVariant {
    /// Area-scaled error drop minus the element penalty.
    Asmr,
    /// As `Asmr` without the division by the element area.
    Unscaled,
    /// Sum of the unscaled rewards, given to every agent.
    Shared,
}

impl RewardVariant {
    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Asmr => "asmr",
            RewardVariant::Unscaled => "unscaled",
            RewardVariant::Shared => "shared",
        }
    }
}

/// Error drop `e_i − Σ_{j∈δ(i)} e'_j` and penalty `α (|δ(i)| − 1)` of agent `i`.
fn drop_and_penalty(i: usize, pre: &[f64], post: &[f64], map: &RefinementMap, alpha: f64) -> (f64, f64) {
    let children = map.children(i);
    let after: f64 = children.iter().map(|&j| post[j]).sum();
    (pre[i] - after, alpha * (children.len() as f64 - 1.0))
}

/// `R_i = (e_i − Σ_{j∈δ(i)} e'_j) / A_i − α (|δ(i)| − 1)` and its variants.
/// `pre` and `post` are normalized errors on the meshes before and after the
/// step, `areas` are the pre-step element areas.
pub fn compute_rewards(
    pre: &[f64],
    post: &[f64],
    map: &RefinementMap,
    areas: &[f64],
    alpha: f64,
    variant: RewardVariant,
) -> Vec<f64> {
    let per_agent = (0..pre.len()).map(|i| {
        let (drop, penalty) = drop_and_penalty(i, pre, post, map, alpha);
        match variant {
            RewardVariant::Asmr => drop / areas[i] - penalty,
            RewardVariant::Unscaled | RewardVariant::Shared => drop - penalty,
        }
    });
    match variant {
        RewardVariant::Shared => {
            let total: f64 = per_agent.sum();
            vec![total; pre.len()]
        }
        _ => per_agent.collect(),
    }
}

/// `J^t_i = R^t_i + γ Σ_{j∈δ^t(i)} J^{t+1}_j`, evaluated backwards.
/// `maps[t]` sends step-`t` agents to step-`t+1` agents.
pub fn lineage_returns(rewards: &[Vec<f64>], maps: &[RefinementMap], gamma: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = rewards.to_vec();
    for t in (0..rewards.len().saturating_sub(1)).rev() {
        let (head, tail) = out.split_at_mut(t + 1);
        let next = &tail[0];
        for (i, j) in head[t].iter_mut().enumerate() {
            *j += gamma * maps[t].children(i).iter().map(|&c| next[c]).sum::<f64>();
        }
    }
    out
}
