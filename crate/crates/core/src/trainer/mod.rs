//! The training loop: collect rollouts, update the discriminators, then run
//! PPO, once per iteration.

pub mod buffer;
pub mod ppo;
pub mod rollout;

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{ReplayBuffer, RolloutBatch};
pub use ppo::{compute_gae, compute_gae_for, normalize_advantages, ppo_update, surrogate_loss, PpoOptimizers, PpoStats};
pub use rollout::{collect_rollouts, sample_skills, sample_skills_seeded, EpisodeStats, ExtrinsicReward, RolloutContext, VecEnv};

use crate::checkpoint::{checkpoint_path, Checkpoint};
use crate::config::RunConfig;
use crate::discriminator::DiscriminatorBank;
use crate::env::ToyQuadruped;
use crate::error::{Error, Result};
use crate::nets::{GaussianPolicy, Network};

/// Completed episodes averaged for `mean_episode_reward`.
const EPISODE_WINDOW: usize = 100;

/// One line of `metrics.jsonl`. Contains no wall-clock data so identical
/// runs produce identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean return of the last completed episodes; `None` before the first
    /// episode ends.
    pub mean_episode_reward: Option<f64>,
    pub mean_step_reward: f64,
    pub mean_skill_reward: f64,
    pub mean_reg_reward: f64,
    pub disc_accuracy: Vec<f64>,
    pub disc_loss: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Static facts about a run written once to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub map_checksum: String,
    pub policy_params: usize,
    pub value_params: usize,
    pub discriminator_params: Vec<usize>,
    pub architecture: String,
}

/// Mutable training state for one run.
pub struct Trainer {
    cfg: RunConfig,
    policy: GaussianPolicy,
    value: Network,
    bank: DiscriminatorBank,
    opt: PpoOptimizers,
    replay: ReplayBuffer,
    venv: VecEnv,
    rollout_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    iteration: usize,
    recent_returns: VecDeque<f64>,
    extrinsic: Option<Box<ExtrinsicReward>>,
    last_batch: Option<RolloutBatch>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.training.seed;
        let env = ToyQuadruped::new(cfg.env.clone())?;
        let layout = env.layout();
        let mut init_rng = stream(seed, 0);
        let policy = GaussianPolicy::new(cfg.policy_spec(), &mut init_rng)?;
        let value = Network::new(cfg.value_spec(), &mut init_rng, 1.0)?;
        let d = &cfg.discriminator;
        let bank = DiscriminatorBank::new(
            layout,
            d.assignment.clone(),
            &d.hidden,
            cfg.skills.num_skills,
            d.training.learning_rate,
            &mut init_rng,
        )?;
        let opt = PpoOptimizers::new(&policy, &value, cfg.ppo.learning_rate);
        let replay = ReplayBuffer::new(d.replay_capacity, layout.motion_dim(), layout.policy_dim())?;
        let mut rollout_rng = stream(seed, 1);
        let venv = VecEnv::new(env, cfg.training.num_envs, cfg.skills.num_skills, &mut rollout_rng)?;
        Ok(Self {
            policy,
            value,
            bank,
            opt,
            replay,
            venv,
            rollout_rng,
            update_rng: stream(seed, 2),
            iteration: 0,
            recent_returns: VecDeque::with_capacity(EPISODE_WINDOW),
            extrinsic: None,
            last_batch: None,
            cfg,
        })
    }

    /// Trains on a task reward instead of the skill-discovery reward.
    pub fn set_extrinsic_reward(&mut self, f: Box<ExtrinsicReward>) {
        self.extrinsic = Some(f);
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    pub fn value(&self) -> &Network {
        &self.value
    }

    pub fn discriminators(&self) -> &DiscriminatorBank {
        &self.bank
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Rollout of the most recent iteration.
    pub fn last_batch(&self) -> Option<&RolloutBatch> {
        self.last_batch.as_ref()
    }

    pub fn header(&self) -> RunHeader {
        RunHeader {
            seed: self.cfg.training.seed,
            map_checksum: self.venv.env().map_checksum(),
            policy_params: self.policy.num_params(),
            value_params: self.value.params().len(),
            discriminator_params: self.bank.heads().iter().map(|h| h.net().params().len()).collect(),
            architecture: self.cfg.policy.architecture.name().into(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.cfg,
            self.iteration,
            self.venv.env().map_checksum(),
            &self.policy,
            &self.value,
            self.bank.heads(),
        )
    }

    /// Runs one iteration; errors carry the iteration index and seed.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let it = self.iteration + 1;
        let seed = self.cfg.training.seed;
        self.step_inner(it)
            .map_err(|e| Error::Training(format!("iteration {it} (seed {seed}): {e}")))
    }

    fn step_inner(&mut self, it: usize) -> Result<IterationMetrics> {
        let ppo_cfg = self.cfg.ppo;
        let ctx = RolloutContext {
            policy: &self.policy,
            value: &self.value,
            bank: &self.bank,
            weights: &self.cfg.reward,
            extrinsic: self.extrinsic.as_deref(),
            gamma: ppo_cfg.gamma,
        };
        let (batch, episodes) = collect_rollouts(
            &ctx,
            &mut self.venv,
            ppo_cfg.steps_per_iteration,
            &mut self.replay,
            &mut self.rollout_rng,
        )?;
        for r in episodes.returns {
            if self.recent_returns.len() == EPISODE_WINDOW {
                self.recent_returns.pop_front();
            }
            self.recent_returns.push_back(r);
        }

        let heads = self.bank.heads().len();
        let mut acc = vec![0.0; heads];
        let mut loss = vec![0.0; heads];
        let dt = self.cfg.discriminator.training;
        for _ in 0..dt.updates_per_iteration {
            let (m, labels) = self.replay.sample(dt.batch_size, &mut self.update_rng)?;
            for (h, u) in self.bank.update(m.view(), &labels)?.into_iter().enumerate() {
                acc[h] += u.accuracy / dt.updates_per_iteration as f64;
                loss[h] += u.loss / dt.updates_per_iteration as f64;
            }
        }

        let (adv, ret) = compute_gae_for(&batch, ppo_cfg.gamma, ppo_cfg.lambda);
        let stats = ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.opt,
            &batch,
            &adv,
            &ret,
            &ppo_cfg,
            &mut self.update_rng,
        )?;

        let n = batch.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let metrics = IterationMetrics {
            iteration: it,
            mean_episode_reward: if self.recent_returns.is_empty() {
                None
            } else {
                Some(self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64)
            },
            mean_step_reward: mean(&batch.rewards),
            mean_skill_reward: mean(&batch.skill_rewards),
            mean_reg_reward: mean(&batch.reg_rewards),
            disc_accuracy: acc,
            disc_loss: loss,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
        };
        self.iteration = it;
        self.last_batch = Some(batch);
        Ok(metrics)
    }
}

/// Summary returned by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub metrics: Vec<IterationMetrics>,
    pub final_checkpoint: PathBuf,
    pub header: RunHeader,
}

/// Files written into a run directory.
pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const TIMINGS_LOG: &str = "timings.jsonl";
pub const RUN_HEADER: &str = "run.json";

/// Trains for `training.iterations` iterations, writing the config echo,
/// metrics, timings and checkpoints into `run_dir`.
pub fn train(cfg: &RunConfig, run_dir: &Path) -> Result<TrainOutcome> {
    train_with(Trainer::new(cfg.clone())?, run_dir, |_| {})
}

/// Like [`train`] with a prepared trainer and a per-iteration callback.
pub fn train_with<F: FnMut(&IterationMetrics)>(mut trainer: Trainer, run_dir: &Path, mut on_iter: F) -> Result<TrainOutcome> {
    std::fs::create_dir_all(run_dir)?;
    let cfg = trainer.config().clone();
    std::fs::write(run_dir.join(CONFIG_ECHO), cfg.to_toml_string()?)?;
    let header = trainer.header();
    std::fs::write(run_dir.join(RUN_HEADER), serde_json::to_string_pretty(&header)?)?;
    let mut metrics_log = std::io::BufWriter::new(std::fs::File::create(run_dir.join(METRICS_LOG))?);
    let mut timings_log = std::io::BufWriter::new(std::fs::File::create(run_dir.join(TIMINGS_LOG))?);
    let start = Instant::now();
    let mut all = Vec::with_capacity(cfg.training.iterations);
    let every = cfg.training.checkpoint_every;
    for _ in 0..cfg.training.iterations {
        let t0 = Instant::now();
        let m = trainer.step()?;
        serde_json::to_writer(&mut metrics_log, &m)?;
        metrics_log.write_all(b"\n")?;
        writeln!(
            timings_log,
            "{{\"iteration\":{},\"wall_time\":{:.6},\"iteration_seconds\":{:.6}}}",
            m.iteration,
            start.elapsed().as_secs_f64(),
            t0.elapsed().as_secs_f64()
        )?;
        if every > 0 && m.iteration % every == 0 && m.iteration != cfg.training.iterations {
            trainer.checkpoint().save(&checkpoint_path(run_dir, m.iteration))?;
        }
        on_iter(&m);
        all.push(m);
    }
    metrics_log.flush()?;
    timings_log.flush()?;
    let final_checkpoint = checkpoint_path(run_dir, trainer.iteration());
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainOutcome {
        run_dir: run_dir.to_path_buf(),
        metrics: all,
        final_checkpoint,
        header,
    })
}

/// Reads a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<IterationMetrics>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> RunConfig {
        let mut c = RunConfig::desk_scale();
        c.training.num_envs = 8;
        c.training.iterations = 3;
        c.ppo.steps_per_iteration = 8;
        c.policy.expert_hidden = vec![16];
        c.policy.feature_dim = 8;
        c.policy.gate_hidden = vec![8];
        c.value.hidden = vec![16];
        c.discriminator.hidden = vec![16];
        c.discriminator.training.batch_size = 32;
        c
    }

    #[test]
    fn iterations_are_deterministic() {
        let run = || {
            let mut t = Trainer::new(tiny_config()).unwrap();
            (0..3).map(|_| t.step().unwrap()).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].disc_accuracy.len(), 3);
    }

    #[test]
    fn single_skill_gives_zero_skill_reward() {
        let mut c = tiny_config();
        c.skills.num_skills = 1;
        let mut t = Trainer::new(c).unwrap();
        for _ in 0..3 {
            assert!(t.step().unwrap().mean_skill_reward.abs() < 1e-6);
        }
    }

    #[test]
    fn train_writes_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny_config();
        c.training.checkpoint_every = 2;
        c.training.iterations = 5;
        let out = train(&c, dir.path()).unwrap();
        assert_eq!(read_metrics(&dir.path().join(METRICS_LOG)).unwrap(), out.metrics);
        assert_eq!(out.metrics.len(), 5);
        for it in [2, 4, 5] {
            assert!(checkpoint_path(dir.path(), it).exists(), "checkpoint {it}");
        }
        let echo = std::fs::read_to_string(dir.path().join(CONFIG_ECHO)).unwrap();
        assert_eq!(RunConfig::from_toml_str(&echo, &[]).unwrap(), c);
        let ck = Checkpoint::load(&out.final_checkpoint).unwrap();
        assert_eq!(ck.iteration, 5);
        assert_eq!(std::fs::read_to_string(dir.path().join(TIMINGS_LOG)).unwrap().lines().count(), 5);
    }

    #[test]
    fn errors_carry_iteration_and_seed() {
        let mut c = tiny_config();
        c.training.seed = 42;
        let mut t = Trainer::new(c).unwrap();
        t.policy.params_mut()[0] = f64::NAN;
        let err = t.step().unwrap_err().to_string();
        assert!(err.contains("iteration 1") && err.contains("seed 42"), "{err}");
    }
}
