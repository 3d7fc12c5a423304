//! Function approximators: plain MLPs, the expert mixture with Gram–Schmidt
//! orthogonalisation, Adam, and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod mlp;
pub mod orthogonal;
pub mod policy;

pub use adam::{clip_grad_norm, Adam};
pub use gradcheck::{grad_check, standard_suite, GradCheckReport};
pub use mlp::{mlp_forward, Activation, Mlp, MlpSpec, MlpTape};
pub use orthogonal::{gram_schmidt, max_normalized_off_diagonal, GramSchmidt, GRAM_SCHMIDT_EPS};
pub use policy::{
    gate, gaussian_entropy, gaussian_log_prob, softmax_rows, Architecture, GaussianPolicy,
    MixtureOfExperts, OmoeSpec, PolicyBody, PolicySpec, PolicyTape,
};

use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// An MLP together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    mlp: Mlp,
    params: Vec<f64>,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R, output_gain: f64) -> crate::Result<Self> {
        let mlp = Mlp::new(spec)?;
        let mut params = vec![0.0; mlp.num_params()];
        mlp.init(rng, &mut params, output_gain);
        Ok(Self { mlp, params })
    }

    pub fn zeroed(spec: MlpSpec) -> crate::Result<Self> {
        let mlp = Mlp::new(spec)?;
        let params = vec![0.0; mlp.num_params()];
        Ok(Self { mlp, params })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn spec(&self) -> &MlpSpec {
        self.mlp.spec()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> crate::Result<()> {
        if params.len() != self.params.len() {
            return Err(crate::Error::Checkpoint(format!(
                "network expects {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> crate::Result<Array2<f64>> {
        self.mlp.forward(&self.params, x)
    }

    pub fn forward_train(&self, x: ArrayView2<f64>) -> crate::Result<MlpTape> {
        self.mlp.forward_train(&self.params, x)
    }

    pub fn backward(&self, tape: &MlpTape, grad_out: ArrayView2<f64>, grads: &mut [f64]) -> Array2<f64> {
        self.mlp.backward(&self.params, tape, grad_out, grads)
    }
}
