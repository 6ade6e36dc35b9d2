//! Fully connected network with tanh hidden layers and a linear output layer.
//!
//! Weights are stored row-major with shape `(out, in)`. Batched entry points take
//! one sample per row. Backward passes return gradients with respect to both the
//! parameters and the inputs; the input gradient is what the gradient-sign attacks
//! consume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, MatRef, Matrix};
use crate::{Error, Result};

/// Activation tag written to network files: tanh on hidden layers, identity on output.
pub const ACTIVATION_TAG: &str = "tanh";

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkFile", into = "NetworkFile")]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Gradient of one dense layer; mirrors [`Dense`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Parameter gradients for a whole network, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    biases: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weights.as_slice().iter().all(|&v| v == 0.0) && l.biases.iter().all(|&v| v == 0.0)
        })
    }

    /// Flattened view, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }
}

/// Activations recorded by [`Mlp::forward_traced`]; `activations[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights `U(±sqrt(6/(fan_in+fan_out)))`, zero biases.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let data = (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[1], w[0]),
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::contract("network needs at least one layer"))?;
        let mut layer_sizes = vec![first.in_dim()];
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != *layer_sizes.last().unwrap() {
                return Err(Error::contract(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.in_dim(),
                    layer_sizes.last().unwrap()
                )));
            }
            if l.biases.len() != l.out_dim() {
                return Err(Error::contract(format!(
                    "layer {i} has {} biases for {} outputs",
                    l.biases.len(),
                    l.out_dim()
                )));
            }
            layer_sizes.push(l.out_dim());
        }
        validate_sizes(&layer_sizes)?;
        Ok(Mlp {
            layer_sizes,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input_len(input.len())?;
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_vec())
    }

    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input_len(inputs.cols())?;
        let mut a = inputs.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            a = self.layer_forward(l, layer, &a);
        }
        Ok(a)
    }

    /// Forward pass that keeps every intermediate activation for a later backward pass.
    pub fn forward_traced(&self, inputs: &Matrix) -> Result<Trace> {
        self.check_input_len(inputs.cols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let next = self.layer_forward(l, layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn layer_forward(&self, l: usize, layer: &Dense, a: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(a.rows(), layer.out_dim());
        gemm(
            1.0,
            MatRef::normal(a),
            MatRef::transposed(&layer.weights),
            0.0,
            &mut z,
        );
        let hidden = l + 1 < self.layers.len();
        let cols = z.cols();
        for row in z.as_mut_slice().chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(&layer.biases) {
                *v += b;
                if hidden {
                    *v = v.tanh();
                }
            }
        }
        z
    }

    /// Reverse-mode pass for a single sample.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        self.check_input_len(input.len())?;
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let g = Matrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
        let (grads, dx) = self.backward_batch(&x, &g)?;
        Ok((grads, dx.into_vec()))
    }

    /// Parameter gradients summed over the batch plus per-sample input gradients.
    pub fn backward_batch(
        &self,
        inputs: &Matrix,
        output_grads: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let trace = self.forward_traced(inputs)?;
        self.backward_traced(&trace, output_grads)
    }

    pub fn backward_traced(
        &self,
        trace: &Trace,
        output_grads: &Matrix,
    ) -> Result<(Gradients, Matrix)> {
        let batch = trace.activations[0].rows();
        if output_grads.shape() != (batch, self.output_size()) {
            return Err(Error::contract(format!(
                "output gradient shape {:?}, expected ({batch}, {})",
                output_grads.shape(),
                self.output_size()
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grads.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a_in = &trace.activations[l];
            let g = &mut grads.layers[l];
            gemm(
                1.0,
                MatRef::transposed(&delta),
                MatRef::normal(a_in),
                0.0,
                &mut g.weights,
            );
            let out = delta.cols();
            for row in delta.as_slice().chunks(out) {
                for (b, d) in g.biases.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let mut upstream = Matrix::zeros(batch, layer.in_dim());
            gemm(
                1.0,
                MatRef::normal(&delta),
                MatRef::normal(&layer.weights),
                0.0,
                &mut upstream,
            );
            if l > 0 {
                // a_in is the tanh output of the previous layer.
                for (u, a) in upstream.as_mut_slice().iter_mut().zip(a_in.as_slice()) {
                    *u *= 1.0 - a * a;
                }
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }

    fn check_input_len(&self, len: usize) -> Result<()> {
        if len != self.input_size() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {len}",
                self.input_size()
            )));
        }
        Ok(())
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::contract(
            "layer sizes need at least an input and an output",
        ));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::contract("layer sizes must be positive"));
    }
    Ok(())
}

/// On-disk network format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub layer_sizes: Vec<usize>,
    /// One row-major `(out, in)` array per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: String,
}

impl TryFrom<NetworkFile> for Mlp {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        if file.activation != ACTIVATION_TAG {
            return Err(Error::contract(format!(
                "unsupported activation tag {:?}",
                file.activation
            )));
        }
        validate_sizes(&file.layer_sizes)?;
        let n_layers = file.layer_sizes.len() - 1;
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(Error::contract(format!(
                "expected {n_layers} weight and bias arrays"
            )));
        }
        let layers = file
            .layer_sizes
            .windows(2)
            .zip(file.weights.into_iter().zip(file.biases))
            .map(|(w, (weights, biases))| {
                Ok(Dense {
                    weights: Matrix::from_vec(w[1], w[0], weights)?,
                    biases,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Mlp::from_layers(layers)?;
        if net.layer_sizes != file.layer_sizes {
            return Err(Error::contract("layer sizes disagree with arrays"));
        }
        Ok(net)
    }
}

impl From<Mlp> for NetworkFile {
    fn from(net: Mlp) -> Self {
        NetworkFile {
            layer_sizes: net.layer_sizes,
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.as_slice().to_vec())
                .collect(),
            biases: net.layers.into_iter().map(|l| l.biases).collect(),
            activation: ACTIVATION_TAG.to_string(),
        }
    }
}
