//! Skill-conditioned Gaussian policies.
//!
//! The mixture body computes `a = head(Σ_i α_i v_i)` where `u_i = E_i(x)` are
//! expert features, `v = GramSchmidt(u)` (skipped for the plain MoE
//! ablation) and `α = softmax(gate(x))`. The input `x` is the policy
//! observation concatenated with the one-hot skill.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpSpec, MlpTape};
use super::orthogonal::GramSchmidt;
use crate::error::{Error, Result};

/// Bounds applied to the learnable log standard deviation.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Moe,
    Omoe,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp => "mlp",
            Architecture::Moe => "moe",
            Architecture::Omoe => "omoe",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Architecture::Mlp),
            "moe" => Ok(Architecture::Moe),
            "omoe" => Ok(Architecture::Omoe),
            other => Err(Error::Config(format!("unknown policy architecture `{other}`"))),
        }
    }
}

/// Shape of the expert-mixture body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmoeSpec {
    pub input_dim: usize,
    pub action_dim: usize,
    pub num_experts: usize,
    pub expert_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub gate_hidden: Vec<usize>,
    pub orthogonalize: bool,
    pub unit_normalize: bool,
    pub activation: Activation,
}

impl OmoeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_experts == 0 {
            return Err(Error::Config("policy.num_experts must be at least 1".into()));
        }
        if self.orthogonalize && self.feature_dim < self.num_experts {
            return Err(Error::Config(format!(
                "policy.num_experts ({}) exceeds expert feature dim ({})",
                self.num_experts, self.feature_dim
            )));
        }
        Ok(())
    }

    fn expert_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.input_dim,
            hidden_dims: self.expert_hidden.clone(),
            output_dim: self.feature_dim,
            activation: self.activation,
        }
    }

    fn gate_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.input_dim,
            hidden_dims: self.gate_hidden.clone(),
            output_dim: self.num_experts,
            activation: self.activation,
        }
    }

    fn head_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.feature_dim,
            hidden_dims: Vec::new(),
            output_dim: self.action_dim,
            activation: self.activation,
        }
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

#[derive(Debug, Clone)]
pub struct MixtureTape {
    expert_tapes: Vec<MlpTape>,
    /// Per sample: raw and output orthogonalised rows, each `N_e × d`.
    raw: Vec<Vec<f64>>,
    ortho: Vec<Vec<f64>>,
    gate_tape: MlpTape,
    alpha: Array2<f64>,
    head_tape: MlpTape,
}

/// Layout of the mixture body inside a flat parameter vector:
/// `[E_1, …, E_Ne, gate, head]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOfExperts {
    spec: OmoeSpec,
    experts: Vec<Mlp>,
    gate: Mlp,
    head: Mlp,
    gs: GramSchmidt,
    expert_offsets: Vec<usize>,
    gate_offset: usize,
    head_offset: usize,
    num_params: usize,
}

impl MixtureOfExperts {
    pub fn new(spec: OmoeSpec) -> Result<Self> {
        spec.validate()?;
        let experts = (0..spec.num_experts)
            .map(|_| Mlp::new(spec.expert_spec()))
            .collect::<Result<Vec<_>>>()?;
        let gate = Mlp::new(spec.gate_spec())?;
        let head = Mlp::new(spec.head_spec())?;
        let mut offset = 0;
        let expert_offsets = experts
            .iter()
            .map(|e| {
                let o = offset;
                offset += e.num_params();
                o
            })
            .collect();
        let gate_offset = offset;
        offset += gate.num_params();
        let head_offset = offset;
        offset += head.num_params();
        let gs = GramSchmidt {
            unit_normalize: spec.unit_normalize,
            ..GramSchmidt::default()
        };
        Ok(Self {
            spec,
            experts,
            gate,
            head,
            gs,
            expert_offsets,
            gate_offset,
            head_offset,
            num_params: offset,
        })
    }

    pub fn spec(&self) -> &OmoeSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn expert_params<'a>(&self, params: &'a [f64], i: usize) -> &'a [f64] {
        let o = self.expert_offsets[i];
        &params[o..o + self.experts[i].num_params()]
    }

    pub fn gate_params<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.gate_offset..self.gate_offset + self.gate.num_params()]
    }

    pub fn head_params<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.head_offset..self.head_offset + self.head.num_params()]
    }

    pub fn head_params_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.head_offset..self.head_offset + self.head.num_params()]
    }

    pub fn gate_mlp(&self) -> &Mlp {
        &self.gate
    }

    pub fn head_mlp(&self) -> &Mlp {
        &self.head
    }

    pub fn expert_mlp(&self, i: usize) -> &Mlp {
        &self.experts[i]
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64], head_gain: f64) {
        for (i, e) in self.experts.iter().enumerate() {
            let o = self.expert_offsets[i];
            e.init(rng, &mut params[o..o + e.num_params()], std::f64::consts::SQRT_2);
        }
        let g = &mut params[self.gate_offset..self.gate_offset + self.gate.num_params()];
        self.gate.init(rng, g, 0.01);
        let h = &mut params[self.head_offset..self.head_offset + self.head.num_params()];
        self.head.init(rng, h, head_gain);
    }

    /// Expert features `u_i` for every sample, one `B × d` matrix per expert.
    pub fn expert_features(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        (0..self.experts.len())
            .map(|i| self.experts[i].forward(self.expert_params(params, i), x))
            .collect()
    }

    /// Gating weights `α`, one simplex point per sample row.
    pub fn gate_weights(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.gate.forward(self.gate_params(params), x)?))
    }

    /// Orthogonalises (or passes through) the features of each sample.
    pub fn combine_features(&self, features: &[Array2<f64>]) -> Vec<Vec<f64>> {
        let (raw, ortho) = self.stack_and_orthogonalize(features);
        if self.spec.orthogonalize {
            ortho
        } else {
            raw
        }
    }

    fn stack_and_orthogonalize(&self, features: &[Array2<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let b = features[0].nrows();
        let (n, d) = (self.spec.num_experts, self.spec.feature_dim);
        let mut raw_all = Vec::with_capacity(b);
        let mut ortho_all = Vec::with_capacity(b);
        for s in 0..b {
            let mut u = Vec::with_capacity(n * d);
            for f in features {
                u.extend(f.row(s).iter());
            }
            if self.spec.orthogonalize {
                let mut v = vec![0.0; n * d];
                let mut out = vec![0.0; n * d];
                self.gs.forward_rows(&u, d, &mut v, &mut out);
                raw_all.push(v);
                ortho_all.push(out);
            } else {
                ortho_all.push(u.clone());
                raw_all.push(u);
            }
        }
        (raw_all, ortho_all)
    }

    /// `Σ_i α_i v_i` for each sample.
    pub fn mix(&self, rows: &[Vec<f64>], alpha: &Array2<f64>) -> Array2<f64> {
        let d = self.spec.feature_dim;
        let mut z = Array2::zeros((rows.len(), d));
        for (s, v) in rows.iter().enumerate() {
            let mut zr = z.row_mut(s);
            for (i, vi) in v.chunks_exact(d).enumerate() {
                let a = alpha[[s, i]];
                for (zk, vk) in zr.iter_mut().zip(vi) {
                    *zk += a * vk;
                }
            }
        }
        z
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let features = self.expert_features(params, x)?;
        let rows = self.combine_features(&features);
        let alpha = self.gate_weights(params, x)?;
        let z = self.mix(&rows, &alpha);
        self.head.forward(self.head_params(params), z.view())
    }

    pub fn forward_train(&self, params: &[f64], x: ArrayView2<f64>) -> Result<MixtureTape> {
        let expert_tapes = (0..self.experts.len())
            .map(|i| self.experts[i].forward_train(self.expert_params(params, i), x))
            .collect::<Result<Vec<_>>>()?;
        let features: Vec<Array2<f64>> = expert_tapes.iter().map(|t| t.output().clone()).collect();
        let (raw, ortho) = self.stack_and_orthogonalize(&features);
        let gate_tape = self.gate.forward_train(self.gate_params(params), x)?;
        let alpha = softmax_rows(gate_tape.output());
        let z = self.mix(&ortho, &alpha);
        let head_tape = self.head.forward_train(self.head_params(params), z.view())?;
        Ok(MixtureTape {
            expert_tapes,
            raw,
            ortho,
            gate_tape,
            alpha,
            head_tape,
        })
    }

    pub fn output<'a>(&self, tape: &'a MixtureTape) -> &'a Array2<f64> {
        tape.head_tape.output()
    }

    pub fn backward(&self, params: &[f64], tape: &MixtureTape, grad_out: ArrayView2<f64>, grads: &mut [f64]) {
        let (n, d) = (self.spec.num_experts, self.spec.feature_dim);
        let b = grad_out.nrows();
        let gz = {
            let g = &mut grads[self.head_offset..self.head_offset + self.head.num_params()];
            self.head.backward(self.head_params(params), &tape.head_tape, grad_out, g)
        };

        let mut g_alpha = Array2::<f64>::zeros((b, n));
        let mut g_features: Vec<Array2<f64>> = (0..n).map(|_| Array2::zeros((b, d))).collect();
        let mut gv = vec![0.0; n * d];
        let mut gu = vec![0.0; n * d];
        for s in 0..b {
            let v = &tape.ortho[s];
            let gzs = gz.row(s);
            for i in 0..n {
                let vi = &v[i * d..(i + 1) * d];
                g_alpha[[s, i]] = gzs.iter().zip(vi).map(|(a, b)| a * b).sum();
                let a = tape.alpha[[s, i]];
                for (k, g) in gv[i * d..(i + 1) * d].iter_mut().enumerate() {
                    *g = a * gzs[k];
                }
            }
            let gu_row: &[f64] = if self.spec.orthogonalize {
                let mut u = Vec::with_capacity(n * d);
                for t in &tape.expert_tapes {
                    u.extend(t.output().row(s).iter());
                }
                self.gs.backward_rows(&u, &tape.raw[s], d, &gv, &mut gu);
                &gu
            } else {
                &gv
            };
            for i in 0..n {
                g_features[i]
                    .row_mut(s)
                    .iter_mut()
                    .zip(&gu_row[i * d..(i + 1) * d])
                    .for_each(|(o, g)| *o = *g);
            }
        }

        // Softmax Jacobian: g_logit = α ⊙ (g_α − ⟨α, g_α⟩).
        let inner = (&tape.alpha * &g_alpha).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g_logits = &tape.alpha * &(&g_alpha - &inner);
        {
            let g = &mut grads[self.gate_offset..self.gate_offset + self.gate.num_params()];
            self.gate.backward(self.gate_params(params), &tape.gate_tape, g_logits.view(), g);
        }
        for (i, e) in self.experts.iter().enumerate() {
            let o = self.expert_offsets[i];
            let g = &mut grads[o..o + e.num_params()];
            e.backward(self.expert_params(params, i), &tape.expert_tapes[i], g_features[i].view(), g);
        }
    }
}

/// Network producing the action mean.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyBody {
    Mlp(Mlp),
    Mixture(MixtureOfExperts),
}

#[derive(Debug, Clone)]
pub enum BodyTape {
    Mlp(MlpTape),
    Mixture(MixtureTape),
}

/// Serializable description of a policy network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub action_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub num_experts: usize,
    pub expert_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub gate_hidden: Vec<usize>,
    pub unit_normalize: bool,
    pub activation: Activation,
    pub init_log_std: f64,
}

impl PolicySpec {
    pub fn omoe_spec(&self) -> OmoeSpec {
        OmoeSpec {
            input_dim: self.input_dim,
            action_dim: self.action_dim,
            num_experts: self.num_experts,
            expert_hidden: self.expert_hidden.clone(),
            feature_dim: self.feature_dim,
            gate_hidden: self.gate_hidden.clone(),
            orthogonalize: self.architecture == Architecture::Omoe,
            unit_normalize: self.unit_normalize,
            activation: self.activation,
        }
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.input_dim,
            hidden_dims: self.mlp_hidden.clone(),
            output_dim: self.action_dim,
            activation: self.activation,
        }
    }
}

/// Diagonal Gaussian policy with state-independent log standard deviation.
/// Parameters are `[body…, log_std(J)]`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    spec: PolicySpec,
    body: PolicyBody,
    body_params: usize,
    params: Vec<f64>,
}

/// Cached forward pass for gradient computation.
#[derive(Debug, Clone)]
pub struct PolicyTape {
    body: BodyTape,
    pub mean: Array2<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(spec: PolicySpec, rng: &mut R) -> Result<Self> {
        let mut policy = Self::zeroed(spec)?;
        let n = policy.body_params;
        match &policy.body {
            PolicyBody::Mlp(m) => m.init(rng, &mut policy.params[..n], 0.01),
            PolicyBody::Mixture(m) => m.init(rng, &mut policy.params[..n], 0.01),
        }
        let init = policy.spec.init_log_std;
        policy.params[n..].fill(init);
        Ok(policy)
    }

    /// All-zero body parameters; used when loading checkpoints.
    pub fn zeroed(spec: PolicySpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.action_dim == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        let body = match spec.architecture {
            Architecture::Mlp => PolicyBody::Mlp(Mlp::new(spec.mlp_spec())?),
            Architecture::Moe | Architecture::Omoe => {
                PolicyBody::Mixture(MixtureOfExperts::new(spec.omoe_spec())?)
            }
        };
        let body_params = match &body {
            PolicyBody::Mlp(m) => m.num_params(),
            PolicyBody::Mixture(m) => m.num_params(),
        };
        let params = vec![0.0; body_params + spec.action_dim];
        Ok(Self {
            spec,
            body,
            body_params,
            params,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn body(&self) -> &PolicyBody {
        &self.body
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "policy expects {} parameters, checkpoint has {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Zeroes the output layer so the mean action is identically zero.
    pub fn zero_head(&mut self) {
        let n = self.body_params;
        match &self.body {
            PolicyBody::Mlp(m) => m.zero_output_layer(&mut self.params[..n]),
            PolicyBody::Mixture(m) => {
                let h = m.head_params_mut(&mut self.params[..n]);
                h.fill(0.0);
            }
        }
    }

    /// Clamped log standard deviation per action dimension.
    pub fn log_std(&self) -> Vec<f64> {
        self.params[self.body_params..]
            .iter()
            .map(|s| s.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn mean_with(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let body = &params[..self.body_params];
        match &self.body {
            PolicyBody::Mlp(m) => m.forward(body, x),
            PolicyBody::Mixture(m) => m.forward(body, x),
        }
    }

    pub fn mean(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.mean_with(&self.params, x)
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<PolicyTape> {
        self.forward_train_with(&self.params, x)
    }

    pub fn forward_train_with(&self, params: &[f64], x: ArrayView2<f64>) -> Result<PolicyTape> {
        let body = &params[..self.body_params];
        let (tape, mean) = match &self.body {
            PolicyBody::Mlp(m) => {
                let t = m.forward_train(body, x)?;
                let mean = t.output().clone();
                (BodyTape::Mlp(t), mean)
            }
            PolicyBody::Mixture(m) => {
                let t = m.forward_train(body, x)?;
                let mean = m.output(&t).clone();
                (BodyTape::Mixture(t), mean)
            }
        };
        Ok(PolicyTape { body: tape, mean })
    }

    /// Accumulates gradients for an upstream gradient on the mean and on the
    /// clamped log standard deviation.
    pub fn backward_with(
        &self,
        params: &[f64],
        tape: &PolicyTape,
        grad_mean: ArrayView2<f64>,
        grad_log_std: &[f64],
        grads: &mut [f64],
    ) {
        let n = self.body_params;
        let (gbody, gstd) = grads.split_at_mut(n);
        match (&self.body, &tape.body) {
            (PolicyBody::Mlp(m), BodyTape::Mlp(t)) => {
                m.backward(&params[..n], t, grad_mean, gbody);
            }
            (PolicyBody::Mixture(m), BodyTape::Mixture(t)) => {
                m.backward(&params[..n], t, grad_mean, gbody);
            }
            _ => unreachable!("tape produced by a different body"),
        }
        for ((g, s), &raw) in gstd.iter_mut().zip(grad_log_std).zip(&params[n..]) {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                *g += s;
            }
        }
    }

    pub fn backward(&self, tape: &PolicyTape, grad_mean: ArrayView2<f64>, grad_log_std: &[f64], grads: &mut [f64]) {
        self.backward_with(&self.params, tape, grad_mean, grad_log_std, grads)
    }
}

/// `log N(a; μ, diag(σ²))` per row.
pub fn gaussian_log_prob(actions: ArrayView2<f64>, mean: ArrayView2<f64>, log_std: &[f64]) -> Vec<f64> {
    actions
        .rows()
        .into_iter()
        .zip(mean.rows())
        .map(|(a, m)| {
            a.iter()
                .zip(m.iter())
                .zip(log_std)
                .map(|((a, m), s)| {
                    let z = (a - m) * (-s).exp();
                    -0.5 * z * z - s - 0.5 * LOG_2PI
                })
                .sum()
        })
        .collect()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| 0.5 + 0.5 * LOG_2PI + s).sum()
}

/// Softmax gate output for single inputs, exposed for inspection.
pub fn gate(mixture: &MixtureOfExperts, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(mixture.gate_weights(params, x)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::orthogonal::{gram_schmidt, max_normalized_off_diagonal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(arch: Architecture, n_e: usize) -> PolicySpec {
        PolicySpec {
            architecture: arch,
            input_dim: 10,
            action_dim: 3,
            mlp_hidden: vec![16, 16],
            num_experts: n_e,
            expert_hidden: vec![12, 12],
            feature_dim: 8,
            gate_hidden: vec![12],
            unit_normalize: false,
            activation: Activation::Elu,
            init_log_std: 0.0,
        }
    }

    fn randomize(p: &mut GaussianPolicy, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in p.params_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }

    fn inputs(seed: u64, b: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((b, 10), |_| rng.random_range(-1.0..1.0))
    }

    fn mixture(p: &GaussianPolicy) -> &MixtureOfExperts {
        match p.body() {
            PolicyBody::Mixture(m) => m,
            _ => panic!("not a mixture"),
        }
    }

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let a = softmax_rows(&Array2::zeros((2, 4)));
        assert!(a.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mut l = Array2::zeros((1, 3));
        l[[0, 0]] = 50.0;
        assert!(softmax_rows(&l)[[0, 0]] > 0.999);
    }

    #[test]
    fn gate_is_a_simplex_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GaussianPolicy::new(spec(Architecture::Omoe, 4), &mut rng).unwrap();
        randomize(&mut p, 2);
        let m = mixture(&p).clone();
        let x = inputs(3, 1000);
        let alpha = m.gate_weights(p.params(), x.view()).unwrap();
        for row in alpha.rows() {
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        let single = gate(&m, p.params(), x.row(0).as_slice().unwrap()).unwrap();
        assert_eq!(single.len(), 4);
    }

    #[test]
    fn composition_equals_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = GaussianPolicy::new(spec(Architecture::Omoe, 3), &mut rng).unwrap();
        randomize(&mut p, 5);
        let m = mixture(&p).clone();
        let params = p.params();
        let x = inputs(6, 7);
        let mean = p.mean(x.view()).unwrap();
        let feats = m.expert_features(params, x.view()).unwrap();
        let alpha = m.gate_weights(params, x.view()).unwrap();
        for s in 0..7 {
            let mut u = Array2::zeros((3, 8));
            for i in 0..3 {
                u.row_mut(i).assign(&feats[i].row(s));
            }
            let v = gram_schmidt(u.view()).unwrap();
            assert!(max_normalized_off_diagonal(v.view()) < 1e-5);
            let mut z = ndarray::Array1::zeros(8);
            for i in 0..3 {
                z += &(&v.row(i) * alpha[[s, i]]);
            }
            let zrow = z.insert_axis(Axis(0));
            let a = m.head_mlp().forward(m.head_params(params), zrow.view()).unwrap();
            assert_eq!(a.row(0), mean.row(s));
        }
    }

    #[test]
    fn single_expert_collapses_to_head_of_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = GaussianPolicy::new(spec(Architecture::Omoe, 1), &mut rng).unwrap();
        randomize(&mut p, 8);
        let m = mixture(&p).clone();
        let x = inputs(9, 5);
        let u = m.expert_mlp(0).forward(m.expert_params(p.params(), 0), x.view()).unwrap();
        let direct = m.head_mlp().forward(m.head_params(p.params()), u.view()).unwrap();
        assert_eq!(p.mean(x.view()).unwrap(), direct);
    }

    #[test]
    fn zero_head_gives_zero_mean() {
        for arch in [Architecture::Mlp, Architecture::Moe, Architecture::Omoe] {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut p = GaussianPolicy::new(spec(arch, 3), &mut rng).unwrap();
            randomize(&mut p, 11);
            p.zero_head();
            assert!(p.mean(inputs(12, 4).view()).unwrap().iter().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn moe_and_omoe_differ_only_by_orthogonalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut omoe = GaussianPolicy::new(spec(Architecture::Omoe, 3), &mut rng).unwrap();
        randomize(&mut omoe, 14);
        let mut moe = GaussianPolicy::zeroed(spec(Architecture::Moe, 3)).unwrap();
        moe.set_params(omoe.params().to_vec()).unwrap();
        let x = inputs(15, 6);
        let m = mixture(&moe).clone();
        let feats = m.expert_features(moe.params(), x.view()).unwrap();
        let alpha = m.gate_weights(moe.params(), x.view()).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|s| feats.iter().flat_map(|f| f.row(s).to_vec()).collect())
            .collect();
        let z = m.mix(&rows, &alpha);
        let direct = m.head_mlp().forward(m.head_params(moe.params()), z.view()).unwrap();
        assert_eq!(moe.mean(x.view()).unwrap(), direct);
        assert_ne!(moe.mean(x.view()).unwrap(), omoe.mean(x.view()).unwrap());
    }

    #[test]
    fn permuting_experts_permutes_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut p = GaussianPolicy::new(spec(Architecture::Omoe, 3), &mut rng).unwrap();
        randomize(&mut p, 17);
        let m = mixture(&p).clone();
        let x = inputs(18, 3);
        let feats = m.expert_features(p.params(), x.view()).unwrap();
        // Swap the parameter blocks of experts 0 and 2.
        let len = m.expert_mlp(0).num_params();
        let mut swapped = p.params().to_vec();
        let (a, b) = (0, 2 * len);
        for k in 0..len {
            swapped.swap(a + k, b + k);
        }
        let feats2 = m.expert_features(&swapped, x.view()).unwrap();
        assert_eq!(feats[0], feats2[2]);
        assert_eq!(feats[2], feats2[0]);
        assert_eq!(feats[1], feats2[1]);
    }

    #[test]
    fn rejects_more_experts_than_feature_dims() {
        let mut s = spec(Architecture::Omoe, 9);
        s.feature_dim = 8;
        assert!(matches!(GaussianPolicy::zeroed(s), Err(Error::Config(_))));
    }

    #[test]
    fn log_prob_of_mean_with_unit_std() {
        let a = Array2::zeros((1, 2));
        let lp = gaussian_log_prob(a.view(), a.view(), &[0.0, 0.0]);
        assert!((lp[0] + LOG_2PI).abs() < 1e-12);
        assert!((gaussian_entropy(&[0.0]) - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut p = GaussianPolicy::new(spec(Architecture::Mlp, 1), &mut rng).unwrap();
        let n = p.num_params();
        p.params_mut()[n - 3] = -9.0;
        p.params_mut()[n - 2] = 7.0;
        assert_eq!(p.log_std(), vec![LOG_STD_MIN, LOG_STD_MAX, 0.0]);
    }

    #[test]
    fn backward_matches_finite_differences_all_architectures() {
        for arch in [Architecture::Mlp, Architecture::Moe, Architecture::Omoe] {
            for unit in [false, true] {
                let mut s = spec(arch, 3);
                s.unit_normalize = unit;
                let mut rng = ChaCha8Rng::seed_from_u64(20);
                let mut p = GaussianPolicy::new(s, &mut rng).unwrap();
                randomize(&mut p, 21);
                let x = inputs(22, 4);
                let w = inputs(23, 4).slice(ndarray::s![.., ..3]).to_owned();
                let params = p.params().to_vec();
                let f = |q: &[f64]| (p.mean_with(q, x.view()).unwrap() * &w).sum();
                let tape = p.forward_train_with(&params, x.view()).unwrap();
                let mut g = vec![0.0; params.len()];
                p.backward_with(&params, &tape, w.view(), &[0.0; 3], &mut g);
                let h = 1e-5;
                let mut worst: f64 = 0.0;
                for i in 0..params.len() {
                    let mut q = params.clone();
                    q[i] += h;
                    let up = f(&q);
                    q[i] -= 2.0 * h;
                    let fd = (up - f(&q)) / (2.0 * h);
                    worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-4));
                }
                assert!(worst < 1e-4, "{arch:?} unit={unit}: {worst}");
            }
        }
    }
}
