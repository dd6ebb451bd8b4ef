//! Running mean/variance normalization of observation features.

use crate::env::ObservationGraph;
use crate::graphnet::Matrix;

/// Normalized features are clipped to `[-CLIP, CLIP]`.
pub const CLIP: f64 = 10.0;
const EPS: f64 = 1e-8;

/// Per-feature running moments (Chan et al. merge of batch moments).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        // a tiny prior count keeps the first merge well defined
        Self { count: 1e-4, mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merges the moments of `rows` (row-major, `dim` columns).
    pub fn update(&mut self, rows: &[f64]) {
        let d = self.dim();
        if d == 0 || rows.is_empty() {
            return;
        }
        let n = (rows.len() / d) as f64;
        let mut bmean = vec![0.0; d];
        for r in rows.chunks_exact(d) {
            for (m, x) in bmean.iter_mut().zip(r) {
                *m += x;
            }
        }
        bmean.iter_mut().for_each(|m| *m /= n);
        let mut bvar = vec![0.0; d];
        for r in rows.chunks_exact(d) {
            for k in 0..d {
                bvar[k] += (r[k] - bmean[k]).powi(2);
            }
        }
        bvar.iter_mut().for_each(|v| *v /= n);
        let total = self.count + n;
        for k in 0..d {
            let delta = bmean[k] - self.mean[k];
            let m2 = self.var[k] * self.count + bvar[k] * n + delta * delta * self.count * n / total;
            self.mean[k] += delta * n / total;
            self.var[k] = (m2 / total).max(0.0);
        }
        self.count = total;
    }

    pub fn normalize(&self, rows: &mut [f64]) {
        let d = self.dim();
        if d == 0 {
            return;
        }
        for r in rows.chunks_exact_mut(d) {
            for k in 0..d {
                r[k] = ((r[k] - self.mean[k]) / (self.var[k] + EPS).sqrt()).clamp(-CLIP, CLIP);
            }
        }
    }
}

/// One normalizer shared by the policy and value networks.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    pub node: RunningStats,
    pub edge: RunningStats,
    pub global: RunningStats,
}

impl RunningNormalizer {
    pub fn new(node_dim: usize, edge_dim: usize, global_dim: usize) -> Self {
        Self { node: RunningStats::new(node_dim), edge: RunningStats::new(edge_dim), global: RunningStats::new(global_dim) }
    }

    pub fn update(&mut self, graph: &ObservationGraph) {
        self.node.update(&graph.node_features);
        self.edge.update(&graph.edge_features);
        self.global.update(&graph.global_features);
    }

    pub fn normalize(&self, graph: &ObservationGraph) -> ObservationGraph {
        let mut g = graph.clone();
        self.node.normalize(&mut g.node_features);
        self.edge.normalize(&mut g.edge_features);
        self.global.normalize(&mut g.global_features);
        g
    }

    /// Tensors for checkpoints: `<part>.mean`, `<part>.var` and `count`.
    pub fn to_tensors(&self, prefix: &str) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (name, s) in [("node", &self.node), ("edge", &self.edge), ("global", &self.global)] {
            out.push((format!("{prefix}{name}.mean"), Matrix::from_vec(1, s.dim(), s.mean.clone())));
            out.push((format!("{prefix}{name}.var"), Matrix::from_vec(1, s.dim(), s.var.clone())));
        }
        let counts = vec![self.node.count, self.edge.count, self.global.count];
        out.push((format!("{prefix}count"), Matrix::from_vec(1, 3, counts)));
        out
    }

    pub fn load_tensors(&mut self, prefix: &str, tensors: &[(String, Matrix)]) -> Result<(), String> {
        let find = |name: String, len: usize| -> Result<Vec<f64>, String> {
            let t = tensors.iter().find(|(n, _)| *n == name).ok_or_else(|| format!("missing tensor {name}"))?;
            if t.1.len() != len {
                return Err(format!("tensor {name} has the wrong shape"));
            }
            Ok(t.1.data.clone())
        };
        let counts = find(format!("{prefix}count"), 3)?;
        for (k, (name, s)) in [("node", &mut self.node), ("edge", &mut self.edge), ("global", &mut self.global)].into_iter().enumerate() {
            let d = s.dim();
            s.mean = find(format!("{prefix}{name}.mean"), d)?;
            s.var = find(format!("{prefix}{name}.var"), d)?;
            s.count = counts[k];
        }
        Ok(())
    }
}
