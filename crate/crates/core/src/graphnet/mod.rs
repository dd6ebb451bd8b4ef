//! Message passing network over observation graphs, with per-node and
//! global heads and exact reverse-mode gradients.
//!
//! Every step updates edges from `(receiver, sender, edge, global)`, nodes
//! from `(node, mean of incoming edges, global)` and the global latent from
//! `(mean node, mean edge, global)`. Each update is a tanh MLP followed by a
//! residual add and layer normalization. The first layer of every MLP is
//! split into one weight block per input, so node projections are computed
//! once and gathered per edge instead of concatenating inputs.

mod checkpoint;
mod tape;

pub use checkpoint::{config_hash, read_checkpoint, write_checkpoint, Checkpoint};
pub use tape::{Gradients, Groups, Matrix, Tape, Var};

use std::rc::Rc;

use rand::Rng;
use thiserror::Error;

use crate::env::ObservationGraph;

#[derive(Debug, Error, PartialEq)]
pub enum GraphNetError {
    #[error("feature dimension mismatch: {0}")]
    Dimension(String),
    #[error("parameter {0} was not recorded on the tape")]
    Detached(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// One logit per node.
    Policy,
    /// One value per node.
    ValuePerAgent,
    /// One value per graph, from the mean node latent and the global latent.
    ValueGlobal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
    pub global_dim: usize,
    pub latent: usize,
    pub hidden: usize,
    /// Hidden layers per MLP.
    pub hidden_layers: usize,
    pub steps: usize,
    /// Drops the global latent and its update entirely.
    pub no_global_messages: bool,
    pub head: Head,
    /// Multiplier on the initial weights of the final head layer.
    pub output_scale: f64,
}

impl NetConfig {
    pub fn new(node_dim: usize, edge_dim: usize, global_dim: usize, head: Head) -> Self {
        Self {
            node_dim,
            edge_dim,
            global_dim,
            latent: 32,
            hidden: 32,
            hidden_layers: 2,
            steps: 2,
            no_global_messages: false,
            head,
            output_scale: if head == Head::Policy { 0.01 } else { 1.0 },
        }
    }

    fn uses_global(&self) -> bool {
        !self.no_global_messages
    }

    /// Stable text form, hashed into checkpoints.
    pub fn describe(&self) -> String {
        format!(
            "node={} edge={} global={} latent={} hidden={} layers={} steps={} no_global_messages={} head={:?} output_scale={:?}",
            self.node_dim,
            self.edge_dim,
            self.global_dim,
            self.latent,
            self.hidden,
            self.hidden_layers,
            self.steps,
            self.no_global_messages,
            self.head,
            self.output_scale
        )
    }

    fn mlp_count(&self, input: usize, output: usize) -> usize {
        let h = self.hidden;
        input * h + h + (self.hidden_layers - 1) * (h * h + h) + h * output + output
    }

    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let d = self.latent;
        let g = self.uses_global() as usize;
        let embed = (self.node_dim + 1) * d + (self.edge_dim + 1) * d + g * (self.global_dim + 1) * d;
        let edge = self.mlp_count((3 + g) * d, d) + 2 * d;
        let node = self.mlp_count((2 + g) * d, d) + 2 * d;
        let global = g * (self.mlp_count(3 * d, d) + 2 * d);
        let head = match self.head {
            Head::Policy | Head::ValuePerAgent => self.mlp_count(d, 1),
            Head::ValueGlobal => self.mlp_count((1 + g) * d, 1),
        };
        embed + self.steps * (edge + node + global) + head
    }
}

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub values: Vec<Matrix>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.values.iter().map(|m| (m.rows, m.cols))
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Matrix)> {
        self.names.iter().zip(&self.values).map(|(n, v)| (format!("{prefix}{n}"), v.clone())).collect()
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Mlp {
    /// One weight block per input.
    first: Vec<usize>,
    first_bias: usize,
    hidden: Vec<Linear>,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Step {
    edge: Mlp,
    edge_norm: Norm,
    node: Mlp,
    node_norm: Norm,
    global: Option<(Mlp, Norm)>,
}

#[derive(Debug, Clone)]
struct Layout {
    node_embed: Linear,
    edge_embed: Linear,
    global_embed: Option<Linear>,
    steps: Vec<Step>,
    head: Mlp,
}

struct Builder<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
    params: ParamSet,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn tensor(&mut self, name: String, value: Matrix) -> usize {
        self.params.names.push(name);
        self.params.values.push(value);
        self.params.len() - 1
    }

    /// Fan-in scaled uniform weights with unit output variance for
    /// unit-variance inputs.
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize, scale: f64) -> usize {
        let limit = (3.0 / fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| scale * self.rng.random_range(-limit..limit)).collect();
        self.tensor(name, Matrix::from_vec(rows, cols, data))
    }

    fn zeros(&mut self, name: String, cols: usize) -> usize {
        self.tensor(name, Matrix::zeros(1, cols))
    }

    fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let w = self.weight(format!("{name}.w"), input, output, input, 1.0);
        let b = self.zeros(format!("{name}.b"), output);
        Linear { w, b }
    }

    fn mlp(&mut self, name: &str, inputs: &[(&str, usize)], hidden: usize, layers: usize, output: usize, scale: f64) -> Mlp {
        let fan_in: usize = inputs.iter().map(|i| i.1).sum();
        let first = inputs.iter().map(|(n, d)| self.weight(format!("{name}.in.{n}"), *d, hidden, fan_in, 1.0)).collect();
        let first_bias = self.zeros(format!("{name}.in.b"), hidden);
        let hidden_layers = (1..layers).map(|l| self.linear(&format!("{name}.h{l}"), hidden, hidden)).collect();
        let w = self.weight(format!("{name}.out.w"), hidden, output, hidden, scale);
        let b = self.zeros(format!("{name}.out.b"), output);
        Mlp { first, first_bias, hidden: hidden_layers, out: Linear { w, b } }
    }

    fn norm(&mut self, name: &str, cols: usize) -> Norm {
        let gain = self.tensor(format!("{name}.gain"), Matrix::from_vec(1, cols, vec![1.0; cols]));
        let bias = self.zeros(format!("{name}.bias"), cols);
        Norm { gain, bias }
    }
}

/// One message passing network with one head.
#[derive(Debug, Clone)]
pub struct GraphNet {
    pub config: NetConfig,
    pub params: ParamSet,
    layout: Layout,
}

/// Per-forward bookkeeping: parameters on the tape and graph indices.
struct Ctx<'a> {
    net: &'a GraphNet,
    vars: Vec<Option<Var>>,
}

impl Ctx<'_> {
    fn p(&mut self, tape: &mut Tape, i: usize) -> Var {
        *self.vars[i].get_or_insert_with(|| tape.param(i, self.net.params.values[i].clone()))
    }

    fn linear(&mut self, tape: &mut Tape, x: Var, l: &Linear, tanh: bool) -> Var {
        let w = self.p(tape, l.w);
        let b = self.p(tape, l.b);
        tape.dense(x, w, b, tanh)
    }

    /// `inputs[k]` is either a full matrix or, with `gather` set, rows picked
    /// from a projected matrix; `row_terms` are `1 × c` inputs added to every row.
    fn mlp(&mut self, tape: &mut Tape, mlp: &Mlp, inputs: &[(Var, Option<Rc<[usize]>>)], row_terms: &[Var]) -> Var {
        let mut h: Option<Var> = None;
        let mut k = 0;
        for (x, gather) in inputs {
            let w = self.p(tape, mlp.first[k]);
            k += 1;
            let mut proj = tape.matmul(*x, w);
            if let Some(idx) = gather {
                proj = tape.gather(proj, idx.clone());
            }
            h = Some(match h {
                None => proj,
                Some(acc) => tape.add(acc, proj),
            });
        }
        let mut h = h.expect("mlp needs a per-row input");
        let mut row = self.p(tape, mlp.first_bias);
        for &g in row_terms {
            let w = self.p(tape, mlp.first[k]);
            k += 1;
            let proj = tape.matmul(g, w);
            row = tape.add(row, proj);
        }
        h = tape.bias_tanh(h, row);
        for l in &mlp.hidden {
            h = self.linear(tape, h, l, true);
        }
        self.linear(tape, h, &mlp.out, false)
    }

    fn residual_norm(&mut self, tape: &mut Tape, x: Var, update: Var, n: &Norm) -> Var {
        let s = tape.add(x, update);
        let gain = self.p(tape, n.gain);
        let bias = self.p(tape, n.bias);
        tape.layer_norm(s, gain, bias)
    }
}

impl GraphNet {
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Self {
        let (d, h, layers) = (config.latent, config.hidden, config.hidden_layers);
        assert!(layers >= 1, "at least one hidden layer");
        let mut b = Builder { rng, params: ParamSet { names: Vec::new(), values: Vec::new() } };
        let node_embed = b.linear("embed.node", config.node_dim, d);
        let edge_embed = b.linear("embed.edge", config.edge_dim, d);
        let global = config.uses_global();
        let global_embed = global.then(|| b.linear("embed.global", config.global_dim, d));
        let steps = (0..config.steps)
            .map(|l| {
                let mut edge_in = vec![("receiver", d), ("sender", d), ("edge", d)];
                let mut node_in = vec![("node", d), ("messages", d)];
                if global {
                    edge_in.push(("global", d));
                    node_in.push(("global", d));
                }
                let edge = b.mlp(&format!("step{l}.edge"), &edge_in, h, layers, d, 1.0);
                let edge_norm = b.norm(&format!("step{l}.edge.norm"), d);
                let node = b.mlp(&format!("step{l}.node"), &node_in, h, layers, d, 1.0);
                let node_norm = b.norm(&format!("step{l}.node.norm"), d);
                let global = global.then(|| {
                    let m = b.mlp(&format!("step{l}.global"), &[("nodes", d), ("edges", d), ("global", d)], h, layers, d, 1.0);
                    (m, b.norm(&format!("step{l}.global.norm"), d))
                });
                Step { edge, edge_norm, node, node_norm, global }
            })
            .collect();
        let head = match config.head {
            Head::Policy | Head::ValuePerAgent => b.mlp("head", &[("node", d)], h, layers, 1, config.output_scale),
            Head::ValueGlobal if global => b.mlp("head", &[("nodes", d), ("global", d)], h, layers, 1, config.output_scale),
            Head::ValueGlobal => b.mlp("head", &[("nodes", d)], h, layers, 1, config.output_scale),
        };
        let layout = Layout { node_embed, edge_embed, global_embed, steps, head };
        Self { config, params: b.params, layout }
    }

    pub fn check_dims(&self, graph: &ObservationGraph) -> Result<(), GraphNetError> {
        let c = &self.config;
        let n = graph.num_nodes();
        let m = graph.num_edges();
        if graph.node_dim != c.node_dim || graph.node_features.len() != n * c.node_dim {
            return Err(GraphNetError::Dimension(format!("node features have width {}, expected {}", graph.node_dim, c.node_dim)));
        }
        if graph.edge_features.len() != m * c.edge_dim || graph.receivers.len() != m {
            return Err(GraphNetError::Dimension(format!("edge features do not match {} edges of width {}", m, c.edge_dim)));
        }
        if graph.global_features.len() != c.global_dim {
            return Err(GraphNetError::Dimension(format!("{} global features, expected {}", graph.global_features.len(), c.global_dim)));
        }
        if graph.senders.iter().chain(&graph.receivers).any(|&i| i >= n) {
            return Err(GraphNetError::Dimension("edge endpoint out of range".into()));
        }
        Ok(())
    }

    /// Records the network on `tape`; the result is `n × 1` for per-node heads
    /// and `1 × 1` for the global value head.
    pub fn forward(&self, graph: &ObservationGraph, tape: &mut Tape) -> Result<Var, GraphNetError> {
        self.check_dims(graph)?;
        let c = &self.config;
        let (n, m) = (graph.num_nodes(), graph.num_edges());
        let lay = &self.layout;
        let mut ctx = Ctx { net: self, vars: vec![None; self.params.len()] };
        let xin = tape.input(Matrix::from_vec(n, c.node_dim, graph.node_features.clone()));
        let ein = tape.input(Matrix::from_vec(m, c.edge_dim, graph.edge_features.clone()));
        let mut x = ctx.linear(tape, xin, &lay.node_embed, false);
        let mut e = ctx.linear(tape, ein, &lay.edge_embed, false);
        let mut g = lay.global_embed.as_ref().map(|l| {
            let gin = tape.input(Matrix::from_vec(1, c.global_dim, graph.global_features.clone()));
            ctx.linear(tape, gin, l, false)
        });
        let receivers: Rc<[usize]> = Rc::from(graph.receivers.as_slice());
        let senders: Rc<[usize]> = Rc::from(graph.senders.as_slice());
        let incoming = Rc::new(Groups::new(&graph.receivers, n));
        let mut globals: Vec<Var> = g.into_iter().collect();
        for step in &lay.steps {
            let upd = ctx.mlp(tape, &step.edge, &[(x, Some(receivers.clone())), (x, Some(senders.clone())), (e, None)], &globals);
            e = ctx.residual_norm(tape, e, upd, &step.edge_norm);
            let agg = tape.scatter_mean(e, incoming.clone());
            let upd = ctx.mlp(tape, &step.node, &[(x, None), (agg, None)], &globals);
            x = ctx.residual_norm(tape, x, upd, &step.node_norm);
            if let (Some((mlp, norm)), Some(gv)) = (&step.global, g) {
                let mx = tape.mean_rows(x);
                let me = tape.mean_rows(e);
                let upd = ctx.mlp(tape, mlp, &[(mx, None)], &[me, gv]);
                let gn = ctx.residual_norm(tape, gv, upd, norm);
                g = Some(gn);
                globals = vec![gn];
            }
        }
        let out = match c.head {
            Head::Policy | Head::ValuePerAgent => ctx.mlp(tape, &lay.head, &[(x, None)], &[]),
            Head::ValueGlobal => {
                let mx = tape.mean_rows(x);
                ctx.mlp(tape, &lay.head, &[(mx, None)], &globals)
            }
        };
        Ok(out)
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, graph: &ObservationGraph) -> Result<Vec<f64>, GraphNetError> {
        let mut tape = Tape::new();
        let out = self.forward(graph, &mut tape)?;
        Ok(tape.value(out).data.clone())
    }

    /// Gradients of `Σ seed_i · out_i` with respect to every parameter, plus the outputs.
    pub fn gradients(&self, graph: &ObservationGraph, seed: &[f64]) -> Result<(Vec<f64>, Vec<Matrix>), GraphNetError> {
        self.gradients_with(graph, |_| seed.to_vec())
    }

    /// Like [`GraphNet::gradients`], with the seed computed from the outputs
    /// of the same forward pass.
    pub fn gradients_with<F>(&self, graph: &ObservationGraph, seed: F) -> Result<(Vec<f64>, Vec<Matrix>), GraphNetError>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let mut tape = Tape::new();
        let out = self.forward(graph, &mut tape)?;
        let ov = tape.value(out);
        let values = ov.data.clone();
        let (rows, cols) = (ov.rows, ov.cols);
        let seed = seed(&values);
        if seed.len() != values.len() {
            return Err(GraphNetError::Dimension(format!("seed of length {} for {} outputs", seed.len(), values.len())));
        }
        let grads = tape.backward(out, &Matrix::from_vec(rows, cols, seed), self.params.len()).into_dense(self.params.shapes());
        Ok((values, grads))
    }

    /// Replaces parameters from named tensors (as written by [`ParamSet::named`]).
    pub fn load_named(&mut self, prefix: &str, tensors: &[(String, Matrix)]) -> Result<(), GraphNetError> {
        for (name, value) in self.params.names.iter().zip(self.params.values.iter_mut()) {
            let full = format!("{prefix}{name}");
            let t = tensors
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| GraphNetError::Checkpoint(format!("missing tensor {full}")))?;
            if (t.1.rows, t.1.cols) != (value.rows, value.cols) {
                return Err(GraphNetError::Checkpoint(format!("tensor {full} has the wrong shape")));
            }
            *value = t.1.clone();
        }
        Ok(())
    }
}
