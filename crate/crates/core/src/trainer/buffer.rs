//! Replay ring buffer for discriminator training and the time-major rollout
//! batch consumed by PPO.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};

/// Fixed-capacity ring of `(o^m, o^p, k)` samples. Once full, each insert
/// overwrites the oldest sample.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    motion_dim: usize,
    policy_dim: usize,
    motion: Vec<f64>,
    policy: Vec<f64>,
    skills: Vec<usize>,
    cursor: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, motion_dim: usize, policy_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            motion_dim,
            policy_dim,
            motion: Vec::new(),
            policy: Vec::new(),
            skills: Vec::new(),
            cursor: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, motion: &[f64], policy: &[f64], skill: usize) -> Result<()> {
        if motion.len() != self.motion_dim || policy.len() != self.policy_dim {
            return Err(Error::Layout(format!(
                "replay expects widths ({}, {}), got ({}, {})",
                self.motion_dim,
                self.policy_dim,
                motion.len(),
                policy.len()
            )));
        }
        if self.len < self.capacity {
            self.motion.extend_from_slice(motion);
            self.policy.extend_from_slice(policy);
            self.skills.push(skill);
            self.len += 1;
        } else {
            let c = self.cursor;
            self.motion[c * self.motion_dim..(c + 1) * self.motion_dim].copy_from_slice(motion);
            self.policy[c * self.policy_dim..(c + 1) * self.policy_dim].copy_from_slice(policy);
            self.skills[c] = skill;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    fn slot(&self, i: usize) -> usize {
        if self.len < self.capacity {
            i
        } else {
            (self.cursor + i) % self.capacity
        }
    }

    /// The `i`-th sample in insertion order, oldest first.
    pub fn get(&self, i: usize) -> Option<(&[f64], &[f64], usize)> {
        if i >= self.len {
            return None;
        }
        let s = self.slot(i);
        Some((
            &self.motion[s * self.motion_dim..(s + 1) * self.motion_dim],
            &self.policy[s * self.policy_dim..(s + 1) * self.policy_dim],
            self.skills[s],
        ))
    }

    /// Uniform sample with replacement of motion observations and labels.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<(Array2<f64>, Vec<usize>)> {
        if self.is_empty() {
            return Err(Error::Training("cannot sample from an empty replay buffer".into()));
        }
        let mut motion = Array2::zeros((batch, self.motion_dim));
        let mut labels = Vec::with_capacity(batch);
        for mut row in motion.rows_mut() {
            let s = rng.random_range(0..self.len);
            row.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&self.motion[s * self.motion_dim..(s + 1) * self.motion_dim]);
            labels.push(self.skills[s]);
        }
        Ok((motion, labels))
    }
}

/// Rollout of `E` environments over `T` steps. Row `t * E + e` holds step
/// `t` of environment `e`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub steps: usize,
    pub num_envs: usize,
    /// Policy input `[o^p, one_hot(k)]` before the step.
    pub inputs: Array2<f64>,
    /// Motion observation after the step.
    pub next_motion: Array2<f64>,
    /// Sampled, unclipped actions.
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub skill_rewards: Vec<f64>,
    pub reg_rewards: Vec<f64>,
    /// Reward used for advantages, including the truncation bootstrap.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    pub skills: Vec<usize>,
    /// `V` of the inputs after the last step, one per env.
    pub last_values: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.steps * self.num_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.inputs.nrows(),
            self.next_motion.nrows(),
            self.actions.nrows(),
            self.log_probs.len(),
            self.values.len(),
            self.skill_rewards.len(),
            self.reg_rewards.len(),
            self.rewards.len(),
            self.dones.len(),
            self.truncated.len(),
            self.skills.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.last_values.len() != self.num_envs {
            return Err(Error::Layout("rollout arrays disagree on (T, E)".into()));
        }
        crate::error::ensure_finite(&self.log_probs, "behavior log-probabilities")?;
        Ok(())
    }
}
