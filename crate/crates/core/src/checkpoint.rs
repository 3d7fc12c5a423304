//! Versioned JSON checkpoints holding the config echo and all parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::discriminator::DiscriminatorHead;
use crate::env::ToyQuadruped;
use crate::error::{Error, Result};
use crate::nets::{GaussianPolicy, Network};

pub const CHECKPOINT_FORMAT: &str = "skillab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub iteration: usize,
    pub map_checksum: String,
    pub config: RunConfig,
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
    pub discriminators: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        iteration: usize,
        map_checksum: String,
        policy: &GaussianPolicy,
        value: &Network,
        heads: &[DiscriminatorHead],
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            iteration,
            map_checksum,
            config: config.clone(),
            policy: policy.params().to_vec(),
            value: value.params().to_vec(),
            discriminators: heads.iter().map(|h| h.net().params().to_vec()).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{} is not a checkpoint: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        Ok(ckpt)
    }

    pub fn env(&self) -> Result<ToyQuadruped> {
        let env = ToyQuadruped::new(self.config.env.clone())?;
        if env.map_checksum() != self.map_checksum {
            return Err(Error::Checkpoint(
                "locomotion map differs from the one the checkpoint was trained on".into(),
            ));
        }
        Ok(env)
    }

    pub fn policy(&self) -> Result<GaussianPolicy> {
        let mut p = GaussianPolicy::zeroed(self.config.policy_spec())?;
        p.set_params(self.policy.clone())?;
        Ok(p)
    }

    pub fn value(&self) -> Result<Network> {
        let mut v = Network::zeroed(self.config.value_spec())?;
        v.set_params(self.value.clone())
            .map_err(|e| Error::Checkpoint(format!("value network: {e}")))?;
        Ok(v)
    }

    pub fn heads(&self) -> Result<Vec<DiscriminatorHead>> {
        let cfg = &self.config;
        let layout = cfg.env.layout()?;
        let subsets = cfg.discriminator.assignment.subsets();
        if subsets.len() != self.discriminators.len() {
            return Err(Error::Checkpoint(format!(
                "config names {} discriminators, checkpoint has {}",
                subsets.len(),
                self.discriminators.len()
            )));
        }
        subsets
            .iter()
            .zip(&self.discriminators)
            .map(|(s, params)| {
                let mut h = DiscriminatorHead::zeroed(layout, s, &cfg.discriminator.hidden, cfg.skills.num_skills)?;
                h.net_mut()
                    .set_params(params.clone())
                    .map_err(|e| Error::Checkpoint(format!("discriminator: {e}")))?;
                Ok(h)
            })
            .collect()
    }
}

pub fn checkpoint_path(run_dir: &Path, iteration: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("iter_{iteration:06}.json"))
}

/// Newest checkpoint in a run directory.
pub fn latest_checkpoint(run_dir: &Path) -> Result<PathBuf> {
    let dir = run_dir.join("checkpoints");
    let mut best: Option<PathBuf> = None;
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| Error::Checkpoint(format!("no checkpoints in {}: {e}", dir.display())))?;
    for entry in entries {
        let p = entry?.path();
        let is_ckpt = p
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("iter_") && n.ends_with(".json"));
        if is_ckpt && best.as_ref().is_none_or(|b| p > *b) {
            best = Some(p);
        }
    }
    best.ok_or_else(|| Error::Checkpoint(format!("no checkpoints in {}", dir.display())))
}

/// Accepts either a checkpoint file or a run directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        latest_checkpoint(path)
    } else if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Checkpoint(format!("checkpoint {} does not exist", path.display())))
    }
}
