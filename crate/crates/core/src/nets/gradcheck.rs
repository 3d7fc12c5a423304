//! Central finite-difference gradient checking.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mlp::Activation;
use super::orthogonal::GramSchmidt;
use super::policy::{MixtureOfExperts, OmoeSpec};
use crate::error::{Error, Result};

/// Step used for central differences at 64-bit precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Components whose gradient magnitude is below this are compared on an
/// absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Pass threshold on the maximum relative error.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub num_components: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Component with the largest relative error.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares an analytic gradient of `f` at `x` against central differences
/// with step `h`.
pub fn grad_check<F>(name: &str, f: F, analytic: &[f64], x: &[f64], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::Layout(format!(
            "{name}: gradient has {} components, input has {}",
            analytic.len(),
            x.len()
        )));
    }
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("{name}: f(x) is not finite")));
    }
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        name: name.to_string(),
        num_components: x.len(),
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        worst_index: 0,
        tolerance: tol,
        passed: true,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!(
                "{name}: non-finite evaluation perturbing component {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(analytic[i], numeric);
        report.max_absolute_error = report.max_absolute_error.max((analytic[i] - numeric).abs());
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_relative_error < tol;
    Ok(report)
}

/// Seeded checks of Gram–Schmidt and of the expert mixture's forward path.
/// `flip_sign` negates every analytic gradient as a negative control.
pub fn standard_suite(seed: u64, flip_sign: bool) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let mut out = Vec::new();

    for (name, gs) in [
        ("gram_schmidt", GramSchmidt::default()),
        ("gram_schmidt_normalized", GramSchmidt::normalized()),
    ] {
        let (n, d) = (6, 64);
        let u = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let analytic: Vec<f64> = gs.vjp(u.view(), w.view())?.iter().map(|g| sign * g).collect();
        let f = |x: &[f64]| {
            let v = gs
                .apply(ndarray::ArrayView2::from_shape((n, d), x).expect("shape"))
                .expect("finite input");
            (&v * &w).sum()
        };
        out.push(grad_check(name, f, &analytic, u.as_slice().expect("standard"), DEFAULT_STEP, DEFAULT_TOLERANCE)?);
    }

    for (name, orthogonalize, unit_normalize) in [
        ("omoe_forward", true, false),
        ("omoe_forward_normalized", true, true),
        ("moe_forward", false, false),
    ] {
        let spec = OmoeSpec {
            input_dim: 10,
            action_dim: 4,
            num_experts: 6,
            expert_hidden: vec![16, 16],
            feature_dim: 16,
            gate_hidden: vec![16],
            orthogonalize,
            unit_normalize,
            activation: Activation::Elu,
        };
        let mix = MixtureOfExperts::new(spec)?;
        let mut params = vec![0.0; mix.num_params()];
        mix.init(&mut rng, &mut params, 1.0);
        for p in params.iter_mut() {
            *p += 0.1 * rng.random_range(-1.0..1.0);
        }
        let x = Array2::from_shape_fn((4, 10), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
        let tape = mix.forward_train(&params, x.view())?;
        let mut grads = vec![0.0; params.len()];
        mix.backward(&params, &tape, w.view(), &mut grads);
        grads.iter_mut().for_each(|g| *g *= sign);
        let f = |p: &[f64]| (&mix.forward(p, x.view()).expect("forward") * &w).sum();
        out.push(grad_check(name, f, &grads, &params, DEFAULT_STEP, DEFAULT_TOLERANCE)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = grad_check("sumsq", f, &[2.0, 4.0], &[1.0, 2.0], DEFAULT_STEP, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_relative_error < 1e-8);
    }

    #[test]
    fn detects_sign_error() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let r = grad_check("sumsq", f, &[-2.0, 4.0], &[1.0, 2.0], DEFAULT_STEP, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_index, 0);
    }

    #[test]
    fn standard_suite_passes_and_negative_control_fails() {
        let reports = standard_suite(0, false).unwrap();
        assert_eq!(reports.len(), 5);
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
        assert!(standard_suite(0, true).unwrap().iter().all(|r| !r.passed));
    }

    #[test]
    fn non_finite_is_an_error() {
        let f = |x: &[f64]| x[0].ln();
        assert!(matches!(
            grad_check("ln", f, &[1.0], &[0.0], DEFAULT_STEP, 1e-4),
            Err(Error::Numeric(_))
        ));
    }
}
