//! Regularization terms and the weighted combination with the skill reward.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub skill: f64,
    pub regularization: f64,
    pub lin_vel_z: f64,
    pub ang_vel_xy: f64,
    pub torque: f64,
    pub joint_accel: f64,
    pub action_rate: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            skill: 1.0,
            regularization: 1.0,
            lin_vel_z: -2.0,
            ang_vel_xy: -0.05,
            torque: -1e-5,
            joint_accel: -2.5e-7,
            action_rate: -0.01,
            collision: -1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let terms = [
            ("lin_vel_z", self.lin_vel_z),
            ("ang_vel_xy", self.ang_vel_xy),
            ("torque", self.torque),
            ("joint_accel", self.joint_accel),
            ("action_rate", self.action_rate),
            ("collision", self.collision),
        ];
        for (name, w) in terms {
            if !(w.is_finite() && w <= 0.0) {
                return Err(Error::Config(format!(
                    "reward.{name} must be a non-positive penalty weight, got {w}"
                )));
            }
        }
        if !(self.skill.is_finite() && self.regularization.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        Ok(())
    }
}

/// Signals consumed by the regularization terms for one transition.
#[derive(Debug, Clone, Copy)]
pub struct RegularizationInputs<'a> {
    /// Motion observation after the step.
    pub motion: &'a [f64],
    pub torque: &'a [f64],
    pub joint_accel: &'a [f64],
    pub action: &'a [f64],
    pub prev_action: &'a [f64],
    /// Collisions during this step only.
    pub collisions: u32,
}

fn sum_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Weighted sum of the six penalty terms.
pub fn regularization_reward(inputs: &RegularizationInputs<'_>, w: &RewardWeights) -> Result<f64> {
    let m = inputs.motion;
    if m.len() < 9 {
        return Err(Error::Layout("motion observation shorter than 9 entries".into()));
    }
    let j = inputs.action.len();
    if inputs.prev_action.len() != j || inputs.torque.len() != j || inputs.joint_accel.len() != j {
        return Err(Error::Layout("regularization inputs disagree on joint count".into()));
    }
    for (what, x) in [
        ("motion", inputs.motion),
        ("torque", inputs.torque),
        ("joint acceleration", inputs.joint_accel),
        ("action", inputs.action),
        ("previous action", inputs.prev_action),
    ] {
        ensure_finite(x, what)?;
    }
    let v_z = m[2];
    let (w_x, w_y) = (m[3], m[4]);
    let rate: f64 = inputs
        .action
        .iter()
        .zip(inputs.prev_action)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(w.lin_vel_z * v_z * v_z
        + w.ang_vel_xy * (w_x * w_x + w_y * w_y)
        + w.torque * sum_sq(inputs.torque)
        + w.joint_accel * sum_sq(inputs.joint_accel)
        + w.action_rate * rate
        + w.collision * inputs.collisions as f64)
}

/// `r = ω^S r^S + ω^R r^R`.
pub fn total_reward(skill: f64, regularization: f64, w: &RewardWeights) -> f64 {
    w.skill * skill + w.regularization * regularization
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zeros(j: usize) -> Vec<f64> {
        vec![0.0; j]
    }

    #[test]
    fn defaults_are_the_table_values() {
        let w = RewardWeights::default();
        assert_eq!(
            [w.lin_vel_z, w.ang_vel_xy, w.torque, w.joint_accel, w.action_rate, w.collision],
            [-2.0, -0.05, -1e-5, -2.5e-7, -0.01, -1.0]
        );
        assert_eq!((w.skill, w.regularization), (1.0, 1.0));
        w.validate().unwrap();
    }

    #[test]
    fn zero_inputs_give_zero() {
        let m = zeros(17);
        let z = zeros(4);
        let r = regularization_reward(
            &RegularizationInputs {
                motion: &m,
                torque: &z,
                joint_accel: &z,
                action: &z,
                prev_action: &z,
                collisions: 0,
            },
            &RewardWeights::default(),
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn vertical_velocity_penalty() {
        let mut m = zeros(17);
        m[2] = 0.5;
        let z = zeros(4);
        let r = regularization_reward(
            &RegularizationInputs {
                motion: &m,
                torque: &z,
                joint_accel: &z,
                action: &z,
                prev_action: &z,
                collisions: 0,
            },
            &RewardWeights::default(),
        )
        .unwrap();
        assert_eq!(r, -0.5);
    }

    fn term_sum(m: &[f64], tau: &[f64], acc: &[f64], a: &[f64], pa: &[f64], n: u32, w: &RewardWeights) -> f64 {
        let mut terms = [0.0; 6];
        terms[0] = w.lin_vel_z * m[2].powi(2);
        terms[1] = w.ang_vel_xy * (m[3].powi(2) + m[4].powi(2));
        for i in 0..tau.len() {
            terms[2] += w.torque * tau[i].powi(2);
            terms[3] += w.joint_accel * acc[i].powi(2);
            terms[4] += w.action_rate * (a[i] - pa[i]).powi(2);
        }
        terms[5] = w.collision * n as f64;
        terms.iter().sum()
    }

    #[test]
    fn random_inputs_match_term_sum_and_single_term_removal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..200 {
            let mut r = |n: usize, s: f64| (0..n).map(|_| rng.random_range(-s..s)).collect::<Vec<f64>>();
            let (m, tau, acc, a, pa) = (r(17, 3.0), r(4, 30.0), r(4, 300.0), r(4, 1.0), r(4, 1.0));
            let n = (trial % 3) as u32;
            let mut w = RewardWeights::default();
            let inputs = RegularizationInputs {
                motion: &m,
                torque: &tau,
                joint_accel: &acc,
                action: &a,
                prev_action: &pa,
                collisions: n,
            };
            let got = regularization_reward(&inputs, &w).unwrap();
            assert!((got - term_sum(&m, &tau, &acc, &a, &pa, n, &w)).abs() < 1e-12);
            assert!(got <= 0.0);
            match trial % 6 {
                0 => w.lin_vel_z = 0.0,
                1 => w.ang_vel_xy = 0.0,
                2 => w.torque = 0.0,
                3 => w.joint_accel = 0.0,
                4 => w.action_rate = 0.0,
                _ => w.collision = 0.0,
            }
            let got = regularization_reward(&inputs, &w).unwrap();
            assert!((got - term_sum(&m, &tau, &acc, &a, &pa, n, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_and_mismatched_inputs() {
        let m = zeros(17);
        let z = zeros(4);
        let bad = vec![0.0, f64::NAN, 0.0, 0.0];
        let w = RewardWeights::default();
        assert!(matches!(
            regularization_reward(
                &RegularizationInputs { motion: &m, torque: &bad, joint_accel: &z, action: &z, prev_action: &z, collisions: 0 },
                &w
            ),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            regularization_reward(
                &RegularizationInputs { motion: &m, torque: &z, joint_accel: &z, action: &z, prev_action: &z[..3], collisions: 0 },
                &w
            ),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn total_reward_examples() {
        let w = RewardWeights::default();
        assert_eq!(total_reward(1.0, -0.25, &w), 0.75);
        assert_eq!(total_reward(0.0, 0.0, &w), 0.0);
        let (a, b) = (0.37, -1.9);
        assert_eq!(total_reward(2.0 * a, 2.0 * b, &w), 2.0 * total_reward(a, b, &w));
    }

    #[test]
    fn positive_penalty_weight_is_rejected() {
        let w = RewardWeights {
            torque: 1e-3,
            ..RewardWeights::default()
        };
        assert!(matches!(w.validate(), Err(Error::Config(_))));
    }
}
