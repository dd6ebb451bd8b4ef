//! Trained agents stored under a key derived from the full training setup,
//! so repeated experiments reuse a finished run instead of retraining.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::problems::PdeFamily;
use crate::env::RefinementEnv;
use crate::rl::{train_with, Agent, PpoConfig, TrainLogRow};

use super::HarnessError;

/// Directory name for one training run: readable prefix plus a digest of
/// every configuration field.
pub fn run_key(cfg: &PpoConfig, family: PdeFamily, seed: u64) -> String {
    let digest = Sha256::digest(format!("{cfg:?}|{}|{seed}", family.name()).as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{}-{}-a{}-s{}-i{}-{hex}", cfg.variant.name(), family.name(), cfg.alpha, seed, cfg.iterations)
}

/// A trained agent and where it lives.
#[derive(Debug, Clone)]
pub struct CachedRun {
    pub agent: Agent,
    pub dir: PathBuf,
    /// False when the run was loaded from disk.
    pub trained: bool,
}

/// Loads `<root>/<key>/final.ckpt`, or trains and writes it there.
pub fn train_cached(
    cfg: &PpoConfig,
    family: PdeFamily,
    seed: u64,
    root: &Path,
    progress: impl FnMut(&TrainLogRow),
) -> Result<CachedRun, HarnessError> {
    let dir = root.join(run_key(cfg, family, seed));
    let ckpt = dir.join("final.ckpt");
    if ckpt.exists() {
        if let Ok(agent) = Agent::load(&ckpt, cfg.variant, cfg.flags) {
            return Ok(CachedRun { agent, dir, trained: false });
        }
    }
    // train into a scratch directory and rename, so an interrupted run never
    // looks finished
    let scratch = root.join(format!("{}.partial", run_key(cfg, family, seed)));
    if scratch.exists() {
        fs::remove_dir_all(&scratch)?;
    }
    let env_cfg = cfg.env_config(family);
    let result = train_with(
        cfg,
        seed,
        || RefinementEnv::new(env_cfg.clone()),
        cfg.flags.node_dim(),
        Some(&scratch),
        progress,
    )?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::rename(&scratch, &dir)?;
    Ok(CachedRun { agent: result.agent, dir, trained: true })
}
