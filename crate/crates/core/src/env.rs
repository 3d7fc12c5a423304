//! Deterministic quadruped surrogate.
//!
//! Joints are unit-inertia point masses driven by a PD controller toward
//! `nominal_pose + clip(action)`. The base twist `[v; ω]` is a fixed linear
//! function of the joint velocities, and the body orientation integrates `ω`.
//! Joint-limit clamps stand in for body collisions. There is no contact
//! model; every signal the regularization terms need is still produced.

use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_finite, Error, Result};
use crate::layout::{Action, ChannelLayout, MotionObservation};

/// World gravity direction.
const WORLD_DOWN: [f64; 3] = [0.0, 0.0, -1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    pub joint_count: usize,
    /// Control period in seconds (50 Hz).
    pub dt: f64,
    pub kp: f64,
    pub kd: f64,
    /// Reference pose the action offsets are added to. Empty means zeros.
    pub nominal_pose: Vec<f64>,
    /// Symmetric position limit `|θ| ≤ joint_limit`.
    pub joint_limit: f64,
    /// Offsets are clipped to `±action_limit` before use.
    pub action_limit: f64,
    /// Seed of the joint-velocity to base-twist map.
    pub env_seed: u64,
    /// Spectral norm the locomotion map is rescaled to.
    pub map_spectral_norm: f64,
    /// Episode terminates once `g_z` rises above this value.
    pub tilt_termination_threshold: f64,
    pub max_episode_steps: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            joint_count: 12,
            dt: 0.02,
            kp: 20.0,
            kd: 0.5,
            nominal_pose: Vec::new(),
            joint_limit: 1.5,
            action_limit: 1.0,
            env_seed: 0,
            map_spectral_norm: 1.0,
            tilt_termination_threshold: -0.5,
            max_episode_steps: 400,
        }
    }
}

impl EnvParams {
    pub fn layout(&self) -> Result<ChannelLayout> {
        ChannelLayout::new(self.joint_count)
    }

    pub fn nominal(&self) -> Vec<f64> {
        if self.nominal_pose.is_empty() {
            vec![0.0; self.joint_count]
        } else {
            self.nominal_pose.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layout()?;
        let positive = [
            ("env.dt", self.dt),
            ("env.kp", self.kp),
            ("env.joint_limit", self.joint_limit),
            ("env.action_limit", self.action_limit),
            ("env.map_spectral_norm", self.map_spectral_norm),
        ];
        for (name, x) in positive {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {x}")));
            }
        }
        if !(self.kd.is_finite() && self.kd >= 0.0) {
            return Err(Error::Config(format!("env.kd must be non-negative, got {}", self.kd)));
        }
        if self.map_spectral_norm > 2.0 {
            return Err(Error::Config(format!(
                "env.map_spectral_norm must not exceed 2.0, got {}",
                self.map_spectral_norm
            )));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("env.max_episode_steps must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.tilt_termination_threshold) {
            return Err(Error::Config(
                "env.tilt_termination_threshold must lie in [-1, 1]".into(),
            ));
        }
        if !self.nominal_pose.is_empty() {
            if self.nominal_pose.len() != self.joint_count {
                return Err(Error::Config(format!(
                    "env.nominal_pose has {} entries, joint_count is {}",
                    self.nominal_pose.len(),
                    self.joint_count
                )));
            }
            if self.nominal_pose.iter().any(|q| q.abs() > self.joint_limit) {
                return Err(Error::Config("env.nominal_pose lies outside the joint limits".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub orientation: UnitQuaternion<f64>,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    /// Clipped action applied on the previous step.
    pub prev_action: Action,
    pub step_count: usize,
    pub last_torque: Vec<f64>,
    pub last_joint_accel: Vec<f64>,
    /// Joint-limit clamps during the last step.
    pub step_collisions: u32,
    /// Joint-limit clamps since reset.
    pub collision_count: u32,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: EnvState,
    pub obs: MotionObservation,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepOutput {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Toy quadruped with a fixed seeded locomotion map.
#[derive(Debug, Clone)]
pub struct ToyQuadruped {
    params: EnvParams,
    layout: ChannelLayout,
    nominal: Vec<f64>,
    /// Row-major 6×J map from joint velocities to `[v; ω]`.
    locomotion_map: Vec<f64>,
}

impl ToyQuadruped {
    pub fn new(params: EnvParams) -> Result<Self> {
        params.validate()?;
        let layout = params.layout()?;
        let nominal = params.nominal();
        let locomotion_map =
            draw_locomotion_map(params.joint_count, params.env_seed, params.map_spectral_norm);
        Ok(Self {
            params,
            layout,
            nominal,
            locomotion_map,
        })
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn locomotion_map(&self) -> &[f64] {
        &self.locomotion_map
    }

    /// Short hex digest of the locomotion map, echoed in log headers.
    pub fn map_checksum(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.locomotion_map {
            h.update(x.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Upright rest state. The surrogate has no reset noise, so every seed
    /// gives the same state.
    pub fn reset(&self, _seed: u64) -> EnvState {
        let j = self.params.joint_count;
        EnvState {
            orientation: UnitQuaternion::identity(),
            joint_pos: self.nominal.clone(),
            joint_vel: vec![0.0; j],
            prev_action: Action::zeros(j),
            step_count: 0,
            last_torque: vec![0.0; j],
            last_joint_accel: vec![0.0; j],
            step_collisions: 0,
            collision_count: 0,
        }
    }

    /// `τ = Kp (target − θ) − Kd θ̇`.
    pub fn pd_torque(&self, joint_pos: &[f64], joint_vel: &[f64], target: &[f64]) -> Vec<f64> {
        pd_torque(self.params.kp, self.params.kd, joint_pos, joint_vel, target)
    }

    /// Base twist `[v; ω] = M θ̇`.
    pub fn twist(&self, joint_vel: &[f64]) -> [f64; 6] {
        let j = self.params.joint_count;
        let mut out = [0.0; 6];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.locomotion_map[r * j..(r + 1) * j];
            *o = row.iter().zip(joint_vel).map(|(m, q)| m * q).sum();
        }
        out
    }

    pub fn observe(&self, state: &EnvState) -> MotionObservation {
        let twist = self.twist(&state.joint_vel);
        let g = state
            .orientation
            .inverse_transform_vector(&Vector3::from(WORLD_DOWN));
        let mut values = Vec::with_capacity(self.layout.motion_dim());
        values.extend_from_slice(&twist);
        values.extend_from_slice(g.as_slice());
        values.extend_from_slice(&state.joint_pos);
        values.extend_from_slice(&state.joint_vel);
        MotionObservation::from_vec(self.layout, values)
            .expect("orientation is renormalized every step")
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<StepOutput> {
        let p = &self.params;
        let j = p.joint_count;
        if action.len() != j {
            return Err(Error::Layout(format!(
                "action has length {}, env has {j} joints",
                action.len()
            )));
        }
        ensure_finite(action.as_slice(), "action")?;
        let clipped = action.clipped(p.action_limit);
        let target: Vec<f64> = self
            .nominal
            .iter()
            .zip(clipped.as_slice())
            .map(|(n, a)| n + a)
            .collect();
        let torque = self.pd_torque(&state.joint_pos, &state.joint_vel, &target);

        let mut joint_pos = state.joint_pos.clone();
        let mut joint_vel = state.joint_vel.clone();
        let mut step_collisions = 0u32;
        for i in 0..j {
            // Unit inertia: acceleration equals torque.
            joint_vel[i] += torque[i] * p.dt;
            joint_pos[i] += joint_vel[i] * p.dt;
            // Only the position is clamped. The velocity is kept, so a joint
            // pressed against its stop still moves the base.
            if joint_pos[i] > p.joint_limit {
                joint_pos[i] = p.joint_limit;
                step_collisions += 1;
            } else if joint_pos[i] < -p.joint_limit {
                joint_pos[i] = -p.joint_limit;
                step_collisions += 1;
            }
        }

        let twist = self.twist(&joint_vel);
        let omega = Vector3::new(twist[3], twist[4], twist[5]);
        let mut orientation = state.orientation * UnitQuaternion::from_scaled_axis(omega * p.dt);
        orientation.renormalize();

        let next = EnvState {
            orientation,
            joint_pos,
            joint_vel,
            prev_action: clipped,
            step_count: state.step_count + 1,
            last_joint_accel: torque.clone(),
            last_torque: torque,
            step_collisions,
            collision_count: state.collision_count + step_collisions,
        };
        let obs = self.observe(&next);
        let g_z = obs.as_slice()[8];
        let terminated = g_z > p.tilt_termination_threshold;
        let truncated = next.step_count >= p.max_episode_steps;
        Ok(StepOutput {
            state: next,
            obs,
            terminated,
            truncated,
        })
    }

    /// Steps every environment independently.
    pub fn batch_step(&self, states: &[EnvState], actions: &[Action]) -> Result<Vec<StepOutput>> {
        if states.len() != actions.len() {
            return Err(Error::Layout(format!(
                "batch_step got {} states and {} actions",
                states.len(),
                actions.len()
            )));
        }
        states
            .iter()
            .zip(actions)
            .map(|(s, a)| self.step(s, a))
            .collect()
    }
}

pub fn pd_torque(kp: f64, kd: f64, joint_pos: &[f64], joint_vel: &[f64], target: &[f64]) -> Vec<f64> {
    joint_pos
        .iter()
        .zip(joint_vel)
        .zip(target)
        .map(|((q, dq), t)| kp * (t - q) - kd * dq)
        .collect()
}

/// Gaussian 6×J matrix rescaled to the requested spectral norm.
fn draw_locomotion_map(joint_count: usize, seed: u64, spectral_norm: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f_636f_6d61_7000);
    let raw: Vec<f64> = (0..6 * joint_count)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let m = DMatrix::from_row_slice(6, joint_count, &raw);
    let sigma_max = m.singular_values().max();
    let scale = if sigma_max > 0.0 { spectral_norm / sigma_max } else { 0.0 };
    raw.into_iter().map(|x| x * scale).collect()
}
