//! Generalized advantage estimation and the clipped-surrogate PPO update.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::config::PpoConfig;
use crate::error::{Error, Result};
use crate::nets::{clip_grad_norm, gaussian_entropy, gaussian_log_prob, Adam, GaussianPolicy, Network};

use super::buffer::RolloutBatch;
use super::rollout::gather_rows;

const ADV_EPS: f64 = 1e-8;

/// Advantages and returns for a time-major batch. `dones[t*E+e]` cuts the
/// recursion after step `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let steps = n / num_envs;
    let mut adv = vec![0.0; n];
    for e in 0..num_envs {
        let mut gae = 0.0;
        for t in (0..steps).rev() {
            let i = t * num_envs + e;
            let next_v = if t + 1 == steps {
                last_values[e]
            } else {
                values[i + num_envs]
            };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_v * live - values[i];
            gae = delta + gamma * lambda * live * gae;
            adv[i] = gae;
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

pub fn compute_gae_for(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    compute_gae(&batch.rewards, &batch.values, &batch.dones, &batch.last_values, batch.num_envs, gamma, lambda)
}

/// Shifts and scales to zero mean and unit standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + ADV_EPS;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Mean clipped surrogate objective, negated so lower is better.
pub fn surrogate_loss(
    policy: &GaussianPolicy,
    inputs: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_ratio: f64,
) -> Result<f64> {
    let mean = policy.mean(inputs)?;
    let logp = gaussian_log_prob(actions, mean.view(), &policy.log_std());
    let m = advantages.len() as f64;
    Ok(-logp
        .iter()
        .zip(old_log_probs)
        .zip(advantages)
        .map(|((l, o), a)| {
            let r = (l - o).exp();
            (r * a).min(r.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * a)
        })
        .sum::<f64>()
        / m)
}

/// Policy and value optimisers.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl PpoOptimizers {
    pub fn new(policy: &GaussianPolicy, value: &Network, lr: f64) -> Self {
        Self {
            policy: Adam::new(policy.num_params(), lr),
            value: Adam::new(value.params().len(), lr),
        }
    }
}

/// Averages over all minibatch steps of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Extremes of the clipped probability ratio.
    pub clipped_ratio_min: f64,
    pub clipped_ratio_max: f64,
}

fn split_minibatches(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|i| (i * n / k)..((i + 1) * n / k)).collect()
}

/// `cfg.epochs` passes over `cfg.minibatches` shuffled minibatches.
/// Advantages are normalised here.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut GaussianPolicy,
    value: &mut Network,
    opt: &mut PpoOptimizers,
    batch: &RolloutBatch,
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoStats> {
    let n = batch.len();
    if advantages.len() != n || returns.len() != n {
        return Err(Error::Layout("advantages/returns differ from batch size".into()));
    }
    let mut adv = advantages.to_vec();
    normalize_advantages(&mut adv);
    let j = batch.actions.ncols();
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats {
        clipped_ratio_min: f64::INFINITY,
        clipped_ratio_max: f64::NEG_INFINITY,
        ..PpoStats::default()
    };
    let mut count = 0usize;
    let (lo, hi) = (1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for range in split_minibatches(n, cfg.minibatches) {
            let idx = &order[range];
            if idx.is_empty() {
                continue;
            }
            let m = idx.len() as f64;
            let x = gather_rows(&batch.inputs, idx);
            let a = gather_rows(&batch.actions, idx);

            let tape = policy.forward_train(x.view())?;
            let log_std = policy.log_std();
            let logp = gaussian_log_prob(a.view(), tape.mean.view(), &log_std);
            let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();

            let mut grad_mean = Array2::zeros((idx.len(), j));
            let mut grad_log_std = vec![-cfg.entropy_coef; j];
            let mut policy_loss = 0.0;
            let mut clipped = 0usize;
            let mut kl = 0.0;
            for (r, &s) in idx.iter().enumerate() {
                let adv_s = adv[s];
                let log_ratio = logp[r] - batch.log_probs[s];
                let ratio = log_ratio.exp();
                let cr = ratio.clamp(lo, hi);
                stats.clipped_ratio_min = stats.clipped_ratio_min.min(cr);
                stats.clipped_ratio_max = stats.clipped_ratio_max.max(cr);
                let (s1, s2) = (ratio * adv_s, cr * adv_s);
                policy_loss -= s1.min(s2);
                kl -= log_ratio;
                if cr != ratio {
                    clipped += 1;
                }
                if s1 <= s2 {
                    let g = -adv_s * ratio / m;
                    for d in 0..j {
                        let diff = a[[r, d]] - tape.mean[[r, d]];
                        grad_mean[[r, d]] = g * diff * inv_var[d];
                        grad_log_std[d] += g * (diff * diff * inv_var[d] - 1.0);
                    }
                }
            }
            policy_loss /= m;
            let entropy = gaussian_entropy(&log_std);

            let vtape = value.forward_train(x.view())?;
            let v = vtape.output().column(0).to_owned();
            let mut value_loss = 0.0;
            let mut grad_v = Array2::zeros((idx.len(), 1));
            for (r, &s) in idx.iter().enumerate() {
                let diff = v[r] - returns[s];
                value_loss += diff * diff;
                grad_v[[r, 0]] = cfg.value_coef * 2.0 * diff / m;
            }
            value_loss /= m;

            let loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite PPO loss (policy {policy_loss}, value {value_loss}, entropy {entropy})"
                )));
            }

            let mut gp = vec![0.0; policy.num_params()];
            policy.backward(&tape, grad_mean.view(), &grad_log_std, &mut gp);
            let mut gv = vec![0.0; value.params().len()];
            value.backward(&vtape, grad_v.view(), &mut gv);
            let norm = clip_grad_norm(&mut [&mut gp, &mut gv], cfg.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::Training("non-finite PPO gradient".into()));
            }
            opt.policy.step(policy.params_mut(), &gp);
            opt.value.step(value.params_mut(), &gv);

            stats.policy_loss += policy_loss;
            stats.value_loss += value_loss;
            stats.entropy += entropy;
            stats.approx_kl += kl / m;
            stats.clip_fraction += clipped as f64 / m;
            stats.grad_norm += norm;
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    stats.policy_loss /= c;
    stats.value_loss /= c;
    stats.entropy /= c;
    stats.approx_kl /= c;
    stats.clip_fraction /= c;
    stats.grad_norm /= c;
    Ok(stats)
}
