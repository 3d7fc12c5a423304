//! Batched multilayer perceptron over a flat parameter slice.
//!
//! Parameters of layer `l` are stored as a row-major `out × in` weight matrix
//! followed by `out` biases. Activations are applied after every layer except
//! the last. Inputs are row-per-sample matrices.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y = f(z)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    /// Hidden widths used for policy, value and discriminator networks.
    pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 128];

    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Elu,
        }
    }

    /// A single affine map with no hidden layer.
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, &[], output_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inp: usize,
    out: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inp * self.out
    }

    fn len(&self) -> usize {
        self.weight_len() + self.out
    }

    fn weights<'a>(&self, params: &'a [f64]) -> ArrayView2<'a, f64> {
        let w = &params[self.offset..self.offset + self.weight_len()];
        ArrayView2::from_shape((self.out, self.inp), w).expect("layer shape")
    }

    fn bias<'a>(&self, params: &'a [f64]) -> ArrayView1<'a, f64> {
        let start = self.offset + self.weight_len();
        ArrayView1::from(&params[start..start + self.out])
    }

    fn grads_mut<'a>(&self, grads: &'a mut [f64]) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (w, b) = grads[self.offset..self.offset + self.len()].split_at_mut(self.weight_len());
        (
            ArrayViewMut2::from_shape((self.out, self.inp), w).expect("layer shape"),
            ArrayViewMut1::from(b),
        )
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// `inputs[l]` is the input of layer `l`; the last entry is the output.
    activations: Vec<Array2<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty tape")
    }
}

/// Shape-only description of an MLP; parameters live in a caller-owned slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<LayerShape>,
    num_params: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 || spec.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "MLP dimensions must be positive: {:?}",
                spec
            )));
        }
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden_dims);
        dims.push(spec.output_dim);
        let mut offset = 0;
        let layers = dims
            .windows(2)
            .map(|w| {
                let l = LayerShape {
                    inp: w[0],
                    out: w[1],
                    offset,
                };
                offset += l.len();
                l
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            num_params: offset,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Scaled-normal initialisation with zero biases. The last layer is
    /// scaled by `output_gain`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, params: &mut [f64], output_gain: f64) {
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let gain = if l == last {
                output_gain
            } else if self.spec.activation == Activation::Tanh {
                1.0
            } else {
                std::f64::consts::SQRT_2
            };
            let std = gain / (shape.inp as f64).sqrt();
            let (w, b) = params[shape.offset..shape.offset + shape.len()].split_at_mut(shape.weight_len());
            if std > 0.0 {
                let dist = Normal::new(0.0, std).expect("positive std");
                for x in w.iter_mut() {
                    *x = dist.sample(rng);
                }
            } else {
                w.fill(0.0);
            }
            b.fill(0.0);
        }
    }

    /// Sets the final layer's weights and biases to zero.
    pub fn zero_output_layer(&self, params: &mut [f64]) {
        let last = self.layers.last().expect("at least one layer");
        params[last.offset..last.offset + last.len()].fill(0.0);
    }

    fn check_input(&self, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::Layout(format!(
                "MLP expects {} parameters, got {}",
                self.num_params,
                params.len()
            )));
        }
        if x.ncols() != self.spec.input_dim {
            return Err(Error::Layout(format!(
                "MLP input has width {}, expected {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    fn affine(shape: &LayerShape, params: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = Array2::zeros((x.nrows(), shape.out));
        general_mat_mul(1.0, x, &shape.weights(params).t(), 0.0, &mut y);
        y += &shape.bias(params);
        y
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(params, &x)?;
        let act = self.spec.activation;
        let mut h = Self::affine(&self.layers[0], params, &x);
        for shape in &self.layers[1..] {
            h.mapv_inplace(|z| act.apply(z));
            h = Self::affine(shape, params, &h.view());
        }
        Ok(h)
    }

    pub fn forward_train(&self, params: &[f64], x: ArrayView2<f64>) -> Result<MlpTape> {
        self.check_input(params, &x)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for (l, shape) in self.layers.iter().enumerate() {
            let mut h = Self::affine(shape, params, &activations[l].view());
            if l < last {
                let act = self.spec.activation;
                h.mapv_inplace(|z| act.apply(z));
            }
            activations.push(h);
        }
        Ok(MlpTape { activations })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &MlpTape,
        grad_out: ArrayView2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grads.len(), self.num_params, "gradient buffer size");
        let mut g = grad_out.to_owned();
        for (l, shape) in self.layers.iter().enumerate().rev() {
            let input = &tape.activations[l];
            {
                let (mut gw, mut gb) = shape.grads_mut(grads);
                general_mat_mul(1.0, &g.t(), input, 1.0, &mut gw);
                gb += &g.sum_axis(Axis(0));
            }
            let mut gx = g.dot(&shape.weights(params));
            if l > 0 {
                let act = self.spec.activation;
                ndarray::Zip::from(&mut gx)
                    .and(input)
                    .for_each(|gi, &y| *gi *= act.derivative_from_output(y));
            }
            g = gx;
        }
        g
    }

    /// Writes an identity map into a single-layer square MLP.
    pub fn set_identity(&self, params: &mut [f64]) -> Result<()> {
        if self.layers.len() != 1 || self.spec.input_dim != self.spec.output_dim {
            return Err(Error::Config("identity requires one square layer".into()));
        }
        params.fill(0.0);
        let n = self.spec.input_dim;
        for i in 0..n {
            params[i * n + i] = 1.0;
        }
        Ok(())
    }
}

/// Single-sample convenience wrapper.
pub fn mlp_forward(mlp: &Mlp, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(mlp.forward(params, x)?.into_raw_vec_and_offset().0)
}
