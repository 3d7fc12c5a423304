//! Run configuration: TOML file, named presets and dotted-path overrides.
//!
//! Resolution order is preset defaults, then the file, then command-line
//! overrides such as `training.iterations=10`. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscriminatorAssignment, DiscriminatorTraining};
use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::nets::{Activation, Architecture, MlpSpec, PolicySpec};
use crate::reward::RewardWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillConfig {
    pub num_skills: usize,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self { num_skills: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub architecture: Architecture,
    pub num_experts: usize,
    pub expert_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub gate_hidden: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub unit_normalize: bool,
    pub init_log_std: f64,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Omoe,
            num_experts: 6,
            expert_hidden: vec![64, 64],
            feature_dim: 64,
            gate_hidden: vec![64, 64],
            mlp_hidden: MlpSpec::DEFAULT_HIDDEN.to_vec(),
            unit_normalize: false,
            init_log_std: 0.0,
            activation: Activation::Elu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueConfig {
    pub hidden: Vec<usize>,
}

impl Default for ValueConfig {
    fn default() -> Self {
        Self {
            hidden: MlpSpec::DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub assignment: DiscriminatorAssignment,
    pub hidden: Vec<usize>,
    #[serde(flatten)]
    pub training: DiscriminatorTraining,
    pub replay_capacity: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            assignment: DiscriminatorAssignment::multi(),
            hidden: MlpSpec::DEFAULT_HIDDEN.to_vec(),
            training: DiscriminatorTraining::default(),
            replay_capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub steps_per_iteration: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 5,
            minibatches: 4,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.005,
            max_grad_norm: 1.0,
            steps_per_iteration: 24,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("ppo.lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::Config("ppo.clip_ratio must be positive".into()));
        }
        if self.epochs == 0 || self.minibatches == 0 || self.steps_per_iteration == 0 {
            return Err(Error::Config(
                "ppo.epochs, ppo.minibatches and ppo.steps_per_iteration must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("ppo.learning_rate and ppo.max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub num_envs: usize,
    /// Save a checkpoint every this many iterations; 0 saves only the last.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            num_envs: 4096,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub duration_steps: usize,
    /// Score every motion channel instead of `v`, `ω`, `g`.
    pub all_channels: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            duration_steps: 1000,
            all_channels: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Settings of the original large-scale experiments.
    #[default]
    Full,
    /// Small enough for a single CPU core.
    DeskScale,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk_scale" | "desk-scale" => Ok(Preset::DeskScale),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub env: EnvParams,
    pub skills: SkillConfig,
    pub policy: PolicyConfig,
    pub value: ValueConfig,
    pub discriminator: DiscriminatorConfig,
    pub ppo: PpoConfig,
    pub reward: RewardWeights,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut cfg = Self {
            preset,
            env: EnvParams::default(),
            skills: SkillConfig::default(),
            policy: PolicyConfig::default(),
            value: ValueConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardWeights::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
        };
        if preset == Preset::DeskScale {
            cfg.env.joint_count = 4;
            cfg.skills.num_skills = 8;
            cfg.policy.num_experts = 3;
            cfg.training.num_envs = 64;
            cfg.training.iterations = 1000;
            cfg.training.checkpoint_every = 250;
        }
        cfg
    }

    pub fn desk_scale() -> Self {
        Self::preset(Preset::DeskScale)
    }

    /// Resolves preset, TOML text and overrides into a validated config.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config is not valid TOML: {e}")))?;
        let mut overrides_tbl = toml::Table::new();
        for o in overrides {
            apply_override(&mut overrides_tbl, o)?;
        }
        let preset_name = overrides_tbl
            .get("preset")
            .or_else(|| file.get("preset"))
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config("preset must be a string".into()))
            })
            .transpose()?;
        let preset = match preset_name {
            Some(name) => name.parse()?,
            None => Preset::Full,
        };
        file.remove("preset");
        overrides_tbl.remove("preset");
        let mut merged = toml::Table::try_from(Self::preset(preset))
            .map_err(|e| Error::Config(format!("cannot serialize preset: {e}")))?;
        merge(&mut merged, file);
        merge(&mut merged, overrides_tbl);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.skills.num_skills == 0 {
            return Err(Error::Config("skills.num_skills must be positive".into()));
        }
        let p = &self.policy;
        let scalars = [("policy.feature_dim", p.feature_dim), ("policy.num_experts", p.num_experts)];
        if let Some((name, _)) = scalars.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        let lists = [
            ("policy.expert_hidden", &p.expert_hidden),
            ("policy.gate_hidden", &p.gate_hidden),
            ("policy.mlp_hidden", &p.mlp_hidden),
            ("value.hidden", &self.value.hidden),
            ("discriminator.hidden", &self.discriminator.hidden),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, v)| v.contains(&0)) {
            return Err(Error::Config(format!("{name} entries must be positive")));
        }
        if p.architecture == Architecture::Omoe && p.num_experts > p.feature_dim {
            return Err(Error::Config(format!(
                "policy.num_experts ({}) exceeds policy.feature_dim ({})",
                p.num_experts, p.feature_dim
            )));
        }
        self.ppo.validate()?;
        self.reward.validate()?;
        let d = &self.discriminator;
        if d.training.batch_size == 0 {
            return Err(Error::Config("discriminator.batch_size must be positive".into()));
        }
        if d.replay_capacity == 0 {
            return Err(Error::Config("discriminator.replay_capacity must be positive".into()));
        }
        if !(d.training.learning_rate > 0.0) {
            return Err(Error::Config("discriminator.learning_rate must be positive".into()));
        }
        if self.training.num_envs == 0 {
            return Err(Error::Config("training.num_envs must be positive".into()));
        }
        if self.eval.bins == 0 {
            return Err(Error::Config("eval.bins must be positive".into()));
        }
        if self.eval.duration_steps == 0 {
            return Err(Error::Config("eval.duration_steps must be positive".into()));
        }
        let batch = self.ppo.steps_per_iteration * self.training.num_envs;
        if batch < self.ppo.minibatches {
            return Err(Error::Config(format!(
                "rollout batch of {batch} samples cannot be split into {} minibatches",
                self.ppo.minibatches
            )));
        }
        Ok(())
    }

    pub fn policy_spec(&self) -> PolicySpec {
        let p = &self.policy;
        PolicySpec {
            architecture: p.architecture,
            input_dim: self.policy_input_dim(),
            action_dim: self.env.joint_count,
            mlp_hidden: p.mlp_hidden.clone(),
            num_experts: p.num_experts,
            expert_hidden: p.expert_hidden.clone(),
            feature_dim: p.feature_dim,
            gate_hidden: p.gate_hidden.clone(),
            unit_normalize: p.unit_normalize,
            activation: p.activation,
            init_log_std: p.init_log_std,
        }
    }

    pub fn value_spec(&self) -> MlpSpec {
        MlpSpec::new(self.policy_input_dim(), &self.value.hidden, 1)
    }

    /// Policy observation plus one-hot skill.
    pub fn policy_input_dim(&self) -> usize {
        9 + 3 * self.env.joint_count + self.skills.num_skills
    }
}

/// Parses `a.b.c=value` into a nested table. The value is read as a TOML
/// literal and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let value = match format!("v = {}", raw.trim()).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().expect("non-empty path");
    let mut cur = table;
    for k in keys {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.skills.num_skills, 100);
        assert_eq!(c.policy.num_experts, 6);
        assert_eq!(c.discriminator.assignment.num_heads(), 3);
        assert_eq!(c.env.joint_count, 12);
        assert_eq!(c.training.num_envs, 4096);
        c.validate().unwrap();
    }

    #[test]
    fn desk_scale_preset() {
        let c = RunConfig::from_toml_str("preset = \"desk_scale\"", &[]).unwrap();
        assert_eq!(
            (c.skills.num_skills, c.policy.num_experts, c.discriminator.assignment.num_heads(), c.env.joint_count, c.training.num_envs),
            (8, 3, 3, 4, 64)
        );
        let c = RunConfig::from_toml_str("", &["preset=desk-scale".into()]).unwrap();
        assert_eq!(c.preset, Preset::DeskScale);
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "[training]\niterations = 50\n";
        let c = RunConfig::from_toml_str(text, &["training.iterations=10".into(), "policy.architecture=mlp".into()]).unwrap();
        assert_eq!(c.training.iterations, 10);
        assert_eq!(c.policy.architecture, Architecture::Mlp);
    }

    #[test]
    fn assignment_from_names() {
        let text = "[discriminator]\nassignment = [[\"v\",\"omega\"],[\"gravity\"],[\"q\",\"dq\"]]\n";
        let c = RunConfig::from_toml_str(text, &[]).unwrap();
        assert_eq!(c.discriminator.assignment, DiscriminatorAssignment::multi());
        let bad = "[discriminator]\nassignment = [[\"v\",\"omega\"],[\"omega\"]]\n";
        assert!(matches!(RunConfig::from_toml_str(bad, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(RunConfig::from_toml_str("", &["policy.num_experts=80".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["policy.expert_hidden=[64, 0]".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["ppo.gamma=1.5".into()]).is_err());
        assert!(RunConfig::from_toml_str("[training]\nbogus = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["training.iterations".into()]).is_err());
        let err = RunConfig::from_toml_str("", &["env.joint_count=0".into()]).unwrap_err();
        assert!(err.to_string().contains("joint_count"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_toml_str("", &["preset=desk_scale".into(), "reward.torque=-2e-5".into()]).unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), c);
    }

    #[test]
    fn input_dim_includes_skill() {
        let c = RunConfig::desk_scale();
        assert_eq!(c.policy_input_dim(), 21 + 8);
        assert_eq!(c.policy_spec().action_dim, 4);
    }
}
