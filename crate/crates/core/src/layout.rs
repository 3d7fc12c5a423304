//! Observation layout shared by every other module.
//!
//! A motion observation is the concatenation `[v, ω, g, θ, θ̇]` of base
//! linear velocity, base angular velocity, projected gravity, joint positions
//! and joint velocities. The policy observation appends the previous action.
//! Spans are explicit so that discriminator subspaces can be declared by
//! channel name rather than by index arithmetic.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit norm of projected gravity.
pub const GRAVITY_NORM_TOL: f64 = 1e-6;

/// One named span of the motion observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Channel {
    LinVel,
    AngVel,
    Gravity,
    JointPos,
    JointVel,
}

impl Channel {
    /// Canonical order of the motion observation.
    pub const ALL: [Channel; 5] = [
        Channel::LinVel,
        Channel::AngVel,
        Channel::Gravity,
        Channel::JointPos,
        Channel::JointVel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::LinVel => "v",
            Channel::AngVel => "omega",
            Channel::Gravity => "gravity",
            Channel::JointPos => "q",
            Channel::JointVel => "dq",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v" | "lin_vel" => Ok(Channel::LinVel),
            "omega" | "ω" | "w" | "ang_vel" => Ok(Channel::AngVel),
            "gravity" | "g" => Ok(Channel::Gravity),
            "q" | "θ" | "theta" | "joint_pos" => Ok(Channel::JointPos),
            "dq" | "θ̇" | "theta_dot" | "joint_vel" => Ok(Channel::JointVel),
            other => Err(Error::Config(format!("unknown channel name `{other}`"))),
        }
    }
}

impl TryFrom<String> for Channel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Channel> for String {
    fn from(c: Channel) -> String {
        c.name().to_string()
    }
}

/// Channel bookkeeping for a robot with `joint_count` actuated joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    joint_count: usize,
}

impl ChannelLayout {
    pub fn new(joint_count: usize) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Config("joint_count must be positive".into()));
        }
        Ok(Self { joint_count })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Length of the motion observation, `9 + 2J`.
    pub fn motion_dim(&self) -> usize {
        9 + 2 * self.joint_count
    }

    /// Length of the policy observation, `9 + 3J`.
    pub fn policy_dim(&self) -> usize {
        9 + 3 * self.joint_count
    }

    pub fn width(&self, channel: Channel) -> usize {
        self.span(channel).len()
    }

    pub fn span(&self, channel: Channel) -> Range<usize> {
        let j = self.joint_count;
        match channel {
            Channel::LinVel => 0..3,
            Channel::AngVel => 3..6,
            Channel::Gravity => 6..9,
            Channel::JointPos => 9..9 + j,
            Channel::JointVel => 9 + j..9 + 2 * j,
        }
    }

    /// Total width of a channel subset.
    pub fn subset_width(&self, subset: &[Channel]) -> usize {
        subset.iter().map(|&c| self.width(c)).sum()
    }

    /// Human-readable labels for every motion-observation entry.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = ["v_x", "v_y", "v_z", "w_x", "w_y", "w_z", "g_x", "g_y", "g_z"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        out.extend((1..=self.joint_count).map(|i| format!("q_{i}")));
        out.extend((1..=self.joint_count).map(|i| format!("dq_{i}")));
        out
    }
}

/// Motion observation `[v, ω, g, θ, θ̇]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionObservation {
    layout: ChannelLayout,
    values: Vec<f64>,
}

impl MotionObservation {
    /// Wraps a raw vector after checking its length and the gravity norm.
    pub fn from_vec(layout: ChannelLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.motion_dim() {
            return Err(Error::Layout(format!(
                "motion observation has length {}, layout expects {}",
                values.len(),
                layout.motion_dim()
            )));
        }
        let g = &values[layout.span(Channel::Gravity)];
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > GRAVITY_NORM_TOL {
            return Err(Error::Domain(format!(
                "projected gravity must be a unit vector, got norm {norm}"
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        &self.values[self.layout.span(channel)]
    }
}

/// Policy observation: motion observation followed by the previous action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObservation {
    layout: ChannelLayout,
    values: Vec<f64>,
}

impl PolicyObservation {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn motion_part(&self) -> &[f64] {
        &self.values[..self.layout.motion_dim()]
    }

    pub fn prev_action_part(&self) -> &[f64] {
        &self.values[self.layout.motion_dim()..]
    }
}

/// Discrete latent skill `k ∈ [0, N_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkillCode {
    index: usize,
    num_skills: usize,
}

impl SkillCode {
    pub fn new(index: usize, num_skills: usize) -> Result<Self> {
        if num_skills == 0 {
            return Err(Error::Domain("num_skills must be positive".into()));
        }
        if index >= num_skills {
            return Err(Error::Domain(format!(
                "skill index {index} out of range for {num_skills} skills"
            )));
        }
        Ok(Self { index, num_skills })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.num_skills];
        e[self.index] = 1.0;
        e
    }
}

/// Checked one-hot embedding of a raw skill index.
pub fn one_hot(index: usize, num_skills: usize) -> Result<Vec<f64>> {
    Ok(SkillCode::new(index, num_skills)?.one_hot())
}

/// Joint-offset targets relative to the nominal pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    values: Vec<f64>,
}

impl Action {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(joint_count: usize) -> Self {
        Self {
            values: vec![0.0; joint_count],
        }
    }

    /// Clamps every component into `[-limit, limit]`. NaN is passed through
    /// so callers can still reject it.
    pub fn clipped(&self, limit: f64) -> Self {
        Self {
            values: self.values.iter().map(|a| a.clamp(-limit, limit)).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Layout(format!(
            "{what} has length {got}, layout expects {want}"
        )));
    }
    Ok(())
}

/// Builds a motion observation from its five channels.
pub fn assemble_motion_obs(
    layout: ChannelLayout,
    lin_vel: &[f64],
    ang_vel: &[f64],
    gravity: &[f64],
    joint_pos: &[f64],
    joint_vel: &[f64],
) -> Result<MotionObservation> {
    let j = layout.joint_count();
    check_len("v", lin_vel.len(), 3)?;
    check_len("omega", ang_vel.len(), 3)?;
    check_len("gravity", gravity.len(), 3)?;
    check_len("q", joint_pos.len(), j)?;
    check_len("dq", joint_vel.len(), j)?;
    let mut values = Vec::with_capacity(layout.motion_dim());
    for part in [lin_vel, ang_vel, gravity, joint_pos, joint_vel] {
        values.extend_from_slice(part);
    }
    MotionObservation::from_vec(layout, values)
}

/// Concatenates the motion observation with the previous action.
pub fn assemble_policy_obs(m: &MotionObservation, prev_action: &Action) -> Result<PolicyObservation> {
    let layout = m.layout();
    check_len("previous action", prev_action.len(), layout.joint_count())?;
    let mut values = Vec::with_capacity(layout.policy_dim());
    values.extend_from_slice(m.as_slice());
    values.extend_from_slice(prev_action.as_slice());
    Ok(PolicyObservation { layout, values })
}

/// Rejects subsets with duplicate channels.
pub fn validate_subset(subset: &[Channel]) -> Result<()> {
    for (i, c) in subset.iter().enumerate() {
        if subset[..i].contains(c) {
            return Err(Error::Config(format!("channel `{c}` listed twice")));
        }
    }
    Ok(())
}

/// Extracts the named spans, concatenated in canonical channel order.
pub fn split_channels(m: &MotionObservation, subset: &[Channel]) -> Result<Vec<f64>> {
    validate_subset(subset)?;
    let mut out = Vec::with_capacity(m.layout().subset_width(subset));
    extract_subset_into(m.layout(), m.as_slice(), subset, &mut out);
    Ok(out)
}

/// Same as [`split_channels`] but resolves names first.
pub fn split_channels_by_name(m: &MotionObservation, names: &[&str]) -> Result<Vec<f64>> {
    let subset = names
        .iter()
        .map(|n| n.parse())
        .collect::<Result<Vec<Channel>>>()?;
    split_channels(m, &subset)
}

/// Unchecked extraction on a raw motion vector; used on hot paths after the
/// subset has been validated once.
pub(crate) fn extract_subset_into(
    layout: ChannelLayout,
    motion: &[f64],
    subset: &[Channel],
    out: &mut Vec<f64>,
) {
    for c in Channel::ALL {
        if subset.contains(&c) {
            out.extend_from_slice(&motion[layout.span(c)]);
        }
    }
}
