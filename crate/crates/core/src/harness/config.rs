//! Experiment configuration, read from TOML or from plain `key=value` lines.
//!
//! Keys (all optional except `method`):
//!
//! | key               | meaning                                              | default            |
//! |-------------------|------------------------------------------------------|--------------------|
//! | `family`          | `laplace` or `poisson`                               | `poisson`          |
//! | `method`          | a registered strategy name                           |                    |
//! | `profile`         | `desk` (150 it., 3 seeds, 20 problems) or `full` (500, 10, 100) | `desk` |
//! | `sweep`           | list of α / T / θ / k / p values                     | per method         |
//! | `seeds`           | list of distinct training/evaluation seeds           | per profile        |
//! | `eval_suite_seed` | seed of the fixed evaluation problems                | `20240`            |
//! | `eval_count`      | number of evaluation problems                        | per profile        |
//! | `iterations`      | PPO iterations per trained policy                    | per profile        |
//! | `horizon`         | refinement steps per episode                         | 4 (argmax: swept)  |
//! | `out`             | output directory                                     | `runs`             |
//! | `checkpoints`     | directory of trained runs                            | `<out>/checkpoints`|

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::problems::PdeFamily;

use super::strategy::{StrategyRegistry, SweepKind};
use super::HarnessError;

pub const DEFAULT_EVAL_SUITE_SEED: u64 = 20240;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "desk" => Some(Profile::Desk),
            "full" => Some(Profile::Full),
            _ => None,
        }
    }

    pub fn iterations(self) -> usize {
        match self {
            Profile::Desk => 150,
            Profile::Full => 500,
        }
    }

    pub fn seeds(self) -> Vec<u64> {
        match self {
            Profile::Desk => (0..3).collect(),
            Profile::Full => (0..10).collect(),
        }
    }

    pub fn eval_count(self) -> usize {
        match self {
            Profile::Desk => 20,
            Profile::Full => 100,
        }
    }

    /// Whether a full sweep takes days on one machine.
    pub fn is_long_running(self) -> bool {
        self == Profile::Full
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub family: PdeFamily,
    pub method: String,
    pub profile: Profile,
    pub sweep: Vec<f64>,
    pub seeds: Vec<u64>,
    pub eval_suite_seed: u64,
    pub eval_count: usize,
    pub iterations: usize,
    /// Steps per episode for every method except the single-mark policy,
    /// whose sweep value is its horizon.
    pub horizon: usize,
    pub out: PathBuf,
    pub checkpoints: PathBuf,
}

/// Default sweep values of a method for a PDE family.
pub fn default_sweep(method: &str, family: PdeFamily) -> Vec<f64> {
    match (method, family) {
        ("asmr" | "shared", PdeFamily::Laplace) => vec![3e-1, 1e-1, 3e-2, 1e-2],
        ("asmr" | "shared", PdeFamily::Poisson) => vec![2e-1, 1e-1, 5e-2, 2e-2, 1e-2, 5e-3],
        ("unscaled" | "vdqn", _) => vec![1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
        ("argmax", _) => vec![20.0, 60.0, 100.0],
        ("heuristic", _) => (0..50).map(|i| i as f64 * 0.02).collect(),
        ("uniform", _) => vec![0.0, 1.0, 2.0, 3.0],
        ("random", _) => vec![0.05, 0.1, 0.2, 0.3, 0.5],
        _ => Vec::new(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: Option<String>,
    method: Option<String>,
    profile: Option<String>,
    sweep: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    eval_suite_seed: Option<u64>,
    eval_count: Option<usize>,
    iterations: Option<usize>,
    horizon: Option<usize>,
    out: Option<PathBuf>,
    checkpoints: Option<PathBuf>,
}

/// Turns `key=value` lines into a TOML table: values that are not valid TOML
/// become strings, and bare comma lists become arrays.
fn key_value_table(text: &str) -> Result<toml::Table, HarnessError> {
    let mut table = toml::Table::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Config(format!("line {}: expected key=value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let parse = |v: &str| -> toml::Value {
            toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()))
        };
        let parsed = if value.contains(',') && !value.starts_with('[') {
            toml::Value::Array(value.split(',').map(|v| parse(v.trim())).collect())
        } else {
            parse(value)
        };
        table.insert(key.to_string(), parsed);
    }
    Ok(table)
}

impl ExperimentConfig {
    /// Parses TOML, falling back to `key=value` lines.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let table = match toml::from_str::<toml::Table>(text) {
            Ok(t) => t,
            Err(_) => key_value_table(text)?,
        };
        // a single sweep value or seed may be written as a scalar
        let mut table = table;
        for key in ["sweep", "seeds"] {
            if let Some(v) = table.get(key).filter(|v| !v.is_array()).cloned() {
                table.insert(key.into(), toml::Value::Array(vec![v]));
            }
        }
        if let Some(toml::Value::Array(values)) = table.get_mut("sweep") {
            for v in values.iter_mut() {
                if let toml::Value::Integer(i) = v {
                    *v = toml::Value::Float(*i as f64);
                }
            }
        }
        let raw: RawConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.message().to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults for `method` on `family`.
    pub fn new(method: &str, family: PdeFamily) -> Result<Self, HarnessError> {
        Self::from_raw(RawConfig { method: Some(method.into()), family: Some(family.name().into()), ..Default::default() })
    }

    fn from_raw(raw: RawConfig) -> Result<Self, HarnessError> {
        let family = match raw.family.as_deref() {
            None => PdeFamily::Poisson,
            Some(f) => PdeFamily::parse(f).ok_or_else(|| HarnessError::Config(format!("unknown PDE family `{f}`")))?,
        };
        let method = raw.method.ok_or_else(|| HarnessError::Config("`method` is required".into()))?;
        let profile = match raw.profile.as_deref() {
            None => Profile::Desk,
            Some(p) => Profile::parse(p).ok_or_else(|| HarnessError::Config(format!("unknown profile `{p}`")))?,
        };
        let out = raw.out.unwrap_or_else(|| "runs".into());
        let cfg = ExperimentConfig {
            family,
            sweep: raw.sweep.unwrap_or_else(|| default_sweep(&method, family)),
            method,
            profile,
            seeds: raw.seeds.unwrap_or_else(|| profile.seeds()),
            eval_suite_seed: raw.eval_suite_seed.unwrap_or(DEFAULT_EVAL_SUITE_SEED),
            eval_count: raw.eval_count.unwrap_or(profile.eval_count()),
            iterations: raw.iterations.unwrap_or(profile.iterations()),
            horizon: raw.horizon.unwrap_or(4),
            checkpoints: raw.checkpoints.unwrap_or_else(|| out.join("checkpoints")),
            out,
        };
        cfg.validate(&StrategyRegistry::with_defaults())?;
        Ok(cfg)
    }

    /// Sweep values valid for the method, seeds distinct, sizes positive.
    pub fn validate(&self, registry: &StrategyRegistry) -> Result<(), HarnessError> {
        let kind = registry.kind(&self.method)?;
        if self.sweep.is_empty() {
            return Err(HarnessError::Config(format!("no sweep values for `{}`", self.method)));
        }
        for &v in &self.sweep {
            kind.check(v, self.horizon).map_err(HarnessError::Config)?;
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty and distinct".into()));
        }
        if self.eval_count == 0 || self.iterations == 0 || self.horizon == 0 {
            return Err(HarnessError::Config("eval_count, iterations and horizon must be positive".into()));
        }
        Ok(())
    }

    /// Episode length for one sweep value.
    pub fn horizon_for(&self, kind: SweepKind, value: f64) -> usize {
        if kind == SweepKind::Horizon {
            value as usize
        } else {
            self.horizon
        }
    }
}
