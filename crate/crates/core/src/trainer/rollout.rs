//! Skill sampling, the vectorised environment wrapper and rollout collection.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discriminator::DiscriminatorBank;
use crate::env::{EnvState, ToyQuadruped};
use crate::error::{Error, Result};
use crate::layout::{Action, MotionObservation};
use crate::nets::{gaussian_log_prob, GaussianPolicy, Network};
use crate::reward::{regularization_reward, total_reward, RegularizationInputs, RewardWeights};

use super::buffer::{ReplayBuffer, RolloutBatch};

/// Task reward on the post-step motion observation. When set it replaces
/// the skill-discovery reward.
pub type ExtrinsicReward = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// `count` i.i.d. uniform skill indices in `[0, num_skills)`.
pub fn sample_skills<R: Rng + ?Sized>(count: usize, num_skills: usize, rng: &mut R) -> Result<Vec<usize>> {
    if num_skills == 0 {
        return Err(Error::Domain("cannot sample from zero skills".into()));
    }
    Ok((0..count).map(|_| rng.random_range(0..num_skills)).collect())
}

pub fn sample_skills_seeded(count: usize, num_skills: usize, seed: u64) -> Result<Vec<usize>> {
    sample_skills(count, num_skills, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `E` copies of the environment, each with its own skill.
#[derive(Debug, Clone)]
pub struct VecEnv {
    env: ToyQuadruped,
    num_skills: usize,
    states: Vec<EnvState>,
    obs: Vec<MotionObservation>,
    skills: Vec<usize>,
    episode_returns: Vec<f64>,
    episode_lengths: Vec<usize>,
}

impl VecEnv {
    pub fn new<R: Rng + ?Sized>(env: ToyQuadruped, num_envs: usize, num_skills: usize, rng: &mut R) -> Result<Self> {
        if num_envs == 0 {
            return Err(Error::Config("training.num_envs must be positive".into()));
        }
        let skills = sample_skills(num_envs, num_skills, rng)?;
        let horizon = env.params().max_episode_steps;
        // Staggered episode clocks so truncations do not line up across envs.
        let states: Vec<EnvState> = (0..num_envs)
            .map(|i| {
                let mut s = env.reset(i as u64);
                s.step_count = rng.random_range(0..horizon);
                s
            })
            .collect();
        let obs = states.iter().map(|s| env.observe(s)).collect();
        Ok(Self {
            env,
            num_skills,
            states,
            obs,
            skills,
            episode_returns: vec![0.0; num_envs],
            episode_lengths: vec![0; num_envs],
        })
    }

    pub fn env(&self) -> &ToyQuadruped {
        &self.env
    }

    pub fn num_envs(&self) -> usize {
        self.states.len()
    }

    pub fn skills(&self) -> &[usize] {
        &self.skills
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    /// Overrides the skill of one environment, e.g. for evaluation.
    pub fn set_skill(&mut self, env: usize, skill: usize) -> Result<()> {
        if skill >= self.num_skills {
            return Err(Error::Domain(format!("skill {skill} out of range")));
        }
        self.skills[env] = skill;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.env.layout().policy_dim() + self.num_skills
    }

    /// Policy inputs `[o^m, a_prev, one_hot(k)]`, one row per environment.
    pub fn inputs(&self) -> Array2<f64> {
        let mut x = Array2::zeros((self.num_envs(), self.input_dim()));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            write_input(row, self.obs[i].as_slice(), self.states[i].prev_action.as_slice(), self.skills[i]);
        }
        x
    }
}

fn write_input(row: &mut [f64], motion: &[f64], prev_action: &[f64], skill: usize) {
    let (m, rest) = row.split_at_mut(motion.len());
    m.copy_from_slice(motion);
    let (a, k) = rest.split_at_mut(prev_action.len());
    a.copy_from_slice(prev_action);
    k.fill(0.0);
    k[skill] = 1.0;
}

/// Models and reward settings read during collection.
pub struct RolloutContext<'a> {
    pub policy: &'a GaussianPolicy,
    pub value: &'a Network,
    pub bank: &'a DiscriminatorBank,
    pub weights: &'a RewardWeights,
    pub extrinsic: Option<&'a ExtrinsicReward>,
    pub gamma: f64,
}

/// Statistics of episodes that ended during a collection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeStats {
    pub returns: Vec<f64>,
    pub lengths: Vec<usize>,
}

fn value_column(value: &Network, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(value.forward(x)?.column(0).to_vec())
}

/// Steps all environments `steps` times under the stochastic policy.
pub fn collect_rollouts<R: Rng + ?Sized>(
    ctx: &RolloutContext<'_>,
    venv: &mut VecEnv,
    steps: usize,
    replay: &mut ReplayBuffer,
    rng: &mut R,
) -> Result<(RolloutBatch, EpisodeStats)> {
    let e = venv.num_envs();
    let layout = venv.env.layout();
    let (md, pd, j) = (layout.motion_dim(), layout.policy_dim(), layout.joint_count());
    let in_dim = venv.input_dim();
    if ctx.policy.spec().input_dim != in_dim || ctx.value.spec().input_dim != in_dim {
        return Err(Error::Layout(format!(
            "networks expect input width {} / {}, environment provides {in_dim}",
            ctx.policy.spec().input_dim,
            ctx.value.spec().input_dim
        )));
    }
    let n = steps * e;
    let mut batch = RolloutBatch {
        steps,
        num_envs: e,
        inputs: Array2::zeros((n, in_dim)),
        next_motion: Array2::zeros((n, md)),
        actions: Array2::zeros((n, j)),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        skill_rewards: Vec::with_capacity(n),
        reg_rewards: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        truncated: Vec::with_capacity(n),
        skills: Vec::with_capacity(n),
        last_values: Vec::new(),
    };
    let mut episodes = EpisodeStats::default();
    let log_std = ctx.policy.log_std();
    let std: Vec<f64> = log_std.iter().map(|s| s.exp()).collect();

    for t in 0..steps {
        let x = venv.inputs();
        let mean = ctx.policy.mean(x.view())?;
        let mut actions = mean.clone();
        for v in actions.iter_mut().zip(std.iter().cycle()) {
            let eps: f64 = rng.sample(StandardNormal);
            *v.0 += v.1 * eps;
        }
        let logp = gaussian_log_prob(actions.view(), mean.view(), &log_std);
        let values = value_column(ctx.value, x.view())?;

        let mut outputs = Vec::with_capacity(e);
        for (i, a) in actions.rows().into_iter().enumerate() {
            let action = Action::new(a.to_vec());
            let out = venv.env.step(&venv.states[i], &action).map_err(|err| {
                Error::Training(format!("env {i} at rollout step {t}: {err}"))
            })?;
            outputs.push(out);
        }
        let mut next = Array2::zeros((e, md));
        for (mut row, out) in next.rows_mut().into_iter().zip(&outputs) {
            row.as_slice_mut().expect("standard layout").copy_from_slice(out.obs.as_slice());
        }
        let skill_r = ctx.bank.skill_reward_batch(next.view(), &venv.skills)?;

        let mut bootstrap_rows = Vec::new();
        let base = t * e;
        for i in 0..e {
            let out = &outputs[i];
            let reg = regularization_reward(
                &RegularizationInputs {
                    motion: out.obs.as_slice(),
                    torque: &out.state.last_torque,
                    joint_accel: &out.state.last_joint_accel,
                    action: out.state.prev_action.as_slice(),
                    prev_action: venv.states[i].prev_action.as_slice(),
                    collisions: out.state.step_collisions,
                },
                ctx.weights,
            )?;
            let r = match ctx.extrinsic {
                Some(f) => f(out.obs.as_slice()),
                None => total_reward(skill_r[i], reg, ctx.weights),
            };
            let row = base + i;
            batch.inputs.row_mut(row).assign(&x.row(i));
            batch.next_motion.row_mut(row).assign(&next.row(i));
            batch.actions.row_mut(row).assign(&actions.row(i));
            batch.log_probs.push(logp[i]);
            batch.values.push(values[i]);
            batch.skill_rewards.push(skill_r[i]);
            batch.reg_rewards.push(reg);
            batch.rewards.push(r);
            batch.dones.push(out.done());
            batch.truncated.push(out.truncated && !out.terminated);
            batch.skills.push(venv.skills[i]);
            replay.push(out.obs.as_slice(), &x.row(i).as_slice().expect("row")[..pd], venv.skills[i])?;
            if out.truncated && !out.terminated {
                bootstrap_rows.push(i);
            }
            venv.episode_returns[i] += r;
            venv.episode_lengths[i] += 1;
        }

        if !bootstrap_rows.is_empty() {
            let mut xb = Array2::zeros((bootstrap_rows.len(), in_dim));
            for (mut row, &i) in xb.rows_mut().into_iter().zip(&bootstrap_rows) {
                let out = &outputs[i];
                write_input(
                    row.as_slice_mut().expect("standard layout"),
                    out.obs.as_slice(),
                    out.state.prev_action.as_slice(),
                    venv.skills[i],
                );
            }
            let vb = value_column(ctx.value, xb.view())?;
            for (&i, v) in bootstrap_rows.iter().zip(vb) {
                batch.rewards[base + i] += ctx.gamma * v;
            }
        }

        for (i, out) in outputs.into_iter().enumerate() {
            if out.done() {
                episodes.returns.push(venv.episode_returns[i]);
                episodes.lengths.push(venv.episode_lengths[i]);
                venv.episode_returns[i] = 0.0;
                venv.episode_lengths[i] = 0;
                venv.states[i] = venv.env.reset(i as u64);
                venv.obs[i] = venv.env.observe(&venv.states[i]);
                venv.skills[i] = rng.random_range(0..venv.num_skills);
            } else {
                venv.states[i] = out.state;
                venv.obs[i] = out.obs;
            }
        }
    }
    let x = venv.inputs();
    batch.last_values = value_column(ctx.value, x.view())?;
    batch.validate()?;
    Ok((batch, episodes))
}

/// Rows of `x` selected by `idx`.
pub(crate) fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::DiscriminatorAssignment;
    use crate::env::EnvParams;
    use crate::nets::{Architecture, MlpSpec, PolicySpec};

    fn small_env() -> ToyQuadruped {
        ToyQuadruped::new(EnvParams {
            joint_count: 2,
            max_episode_steps: 5,
            ..EnvParams::default()
        })
        .unwrap()
    }

    fn models(env: &ToyQuadruped, n_k: usize, rng: &mut ChaCha8Rng) -> (GaussianPolicy, Network, DiscriminatorBank) {
        let layout = env.layout();
        let in_dim = layout.policy_dim() + n_k;
        let spec = PolicySpec {
            architecture: Architecture::Omoe,
            input_dim: in_dim,
            action_dim: layout.joint_count(),
            mlp_hidden: vec![16],
            num_experts: 2,
            expert_hidden: vec![8],
            feature_dim: 8,
            gate_hidden: vec![8],
            unit_normalize: false,
            activation: crate::nets::Activation::Elu,
            init_log_std: 0.0,
        };
        let policy = GaussianPolicy::new(spec, rng).unwrap();
        let value = Network::new(MlpSpec::new(in_dim, &[16], 1), rng, 1.0).unwrap();
        let bank = DiscriminatorBank::new(layout, DiscriminatorAssignment::multi(), &[8], n_k, 1e-3, rng).unwrap();
        (policy, value, bank)
    }

    #[test]
    fn skill_frequencies_are_uniform() {
        let s = sample_skills_seeded(80_000, 8, 5).unwrap();
        let (n, p) = (80_000.0, 1.0 / 8.0);
        let var = n * p * (1.0 - p);
        for k in 0..8 {
            let c = s.iter().filter(|&&x| x == k).count() as f64;
            assert!((c - n * p).abs() < 3.0 * var.sqrt(), "skill {k}: {c}");
        }
        assert_eq!(s, sample_skills_seeded(80_000, 8, 5).unwrap());
        assert!(sample_skills_seeded(10, 1, 0).unwrap().iter().all(|&k| k == 0));
        assert!(sample_skills_seeded(1, 0, 0).is_err());
    }

    #[test]
    fn single_step_matches_hand_stepped_transition() {
        let env = ToyQuadruped::new(EnvParams { joint_count: 2, ..EnvParams::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (policy, value, bank) = models(&env, 3, &mut rng);
        let mut venv = VecEnv::new(env.clone(), 1, 3, &mut rng).unwrap();
        let k = venv.skills()[0];
        let s0 = venv.states()[0].clone();
        let x0 = venv.inputs();
        let mut replay = ReplayBuffer::new(10, 13, 15).unwrap();
        let weights = RewardWeights::default();
        let ctx = RolloutContext { policy: &policy, value: &value, bank: &bank, weights: &weights, extrinsic: None, gamma: 0.99 };
        let mut roll_rng = ChaCha8Rng::seed_from_u64(9);
        let (b, _) = collect_rollouts(&ctx, &mut venv, 1, &mut replay, &mut roll_rng).unwrap();

        // Oracle: redo the transition by hand with the same noise stream.
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let mean = policy.mean(x0.view()).unwrap();
        let ls = policy.log_std();
        let a: Vec<f64> = (0..2)
            .map(|d| {
                let eps: f64 = r2.sample(StandardNormal);
                mean[[0, d]] + ls[d].exp() * eps
            })
            .collect();
        assert_eq!(b.actions.row(0).to_vec(), a);
        let out = env.step(&s0, &Action::new(a.clone())).unwrap();
        assert_eq!(b.next_motion.row(0).to_vec(), out.obs.as_slice().to_vec());
        let rs = bank.skill_reward_batch(b.next_motion.view(), &[k]).unwrap()[0];
        let rr = regularization_reward(
            &RegularizationInputs {
                motion: out.obs.as_slice(),
                torque: &out.state.last_torque,
                joint_accel: &out.state.last_joint_accel,
                action: out.state.prev_action.as_slice(),
                prev_action: &[0.0, 0.0],
                collisions: out.state.step_collisions,
            },
            &weights,
        )
        .unwrap();
        assert_eq!(b.skill_rewards[0], rs);
        assert_eq!(b.reg_rewards[0], rr);
        assert_eq!(b.rewards[0], rs + rr);
        assert_eq!(b.values[0], value.forward(x0.view()).unwrap()[[0, 0]]);
        assert_eq!(replay.len(), 1);
        assert_eq!(replay.get(0).unwrap().2, k);
    }

    #[test]
    fn done_flags_follow_env_and_uniform_heads_give_zero_skill_reward() {
        let env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut policy, value, _) = models(&env, 4, &mut rng);
        policy.zero_head();
        let layout = env.layout();
        let heads = DiscriminatorAssignment::multi()
            .subsets()
            .iter()
            .map(|s| crate::discriminator::DiscriminatorHead::zeroed(layout, s, &[8], 4).unwrap())
            .collect();
        let bank = DiscriminatorBank::from_heads(layout, DiscriminatorAssignment::multi(), 4, heads, 1e-3);
        let mut venv = VecEnv::new(env, 3, 4, &mut rng).unwrap();
        let venv_start: Vec<usize> = venv.states().iter().map(|s| s.step_count).collect();
        assert!(venv_start.iter().all(|&s| s < 5));
        let mut replay = ReplayBuffer::new(100, 13, 15).unwrap();
        let weights = RewardWeights::default();
        let ctx = RolloutContext { policy: &policy, value: &value, bank: &bank, weights: &weights, extrinsic: None, gamma: 0.99 };
        let (b, eps) = collect_rollouts(&ctx, &mut venv, 12, &mut replay, &mut rng).unwrap();
        assert!(b.skill_rewards.iter().all(|r| r.abs() < 1e-12));
        // Episodes of 5 steps unless tilted over first.
        for e in 0..3 {
            let mut len = venv_start[e];
            for t in 0..12 {
                len += 1;
                let i = t * 3 + e;
                if b.dones[i] {
                    assert!(len == 5 || !b.truncated[i]);
                    len = 0;
                } else {
                    assert!(len < 5);
                }
            }
        }
        assert_eq!(eps.returns.len(), b.dones.iter().filter(|&&d| d).count());
        assert_eq!(replay.len(), 36);
    }

    #[test]
    fn extrinsic_reward_replaces_skill_reward() {
        let env = small_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (policy, value, bank) = models(&env, 2, &mut rng);
        let mut venv = VecEnv::new(env, 2, 2, &mut rng).unwrap();
        let mut replay = ReplayBuffer::new(100, 13, 15).unwrap();
        let weights = RewardWeights::default();
        let f: Box<ExtrinsicReward> = Box::new(|m: &[f64]| -(m[0] - 0.5).abs());
        let ctx = RolloutContext { policy: &policy, value: &value, bank: &bank, weights: &weights, extrinsic: Some(f.as_ref()), gamma: 0.0 };
        let (b, _) = collect_rollouts(&ctx, &mut venv, 3, &mut replay, &mut rng).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.rewards[i], -(b.next_motion[[i, 0]] - 0.5).abs());
        }
    }
}
