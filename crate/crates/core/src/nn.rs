//! Small fully connected ReLU network with hand-written reverse mode.
//!
//! Hidden layers use ReLU, the output head is linear. The ReLU derivative at
//! exactly zero is taken as zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Layer widths of the contact network: 4 inputs, three hidden layers of 16, 4 outputs.
pub const CONTACT_DIMS: [usize; 5] = [4, 16, 16, 16, 4];
/// Layer widths of the pure-network baseline: same trunk, 3 outputs.
pub const BASELINE_DIMS: [usize; 5] = [4, 16, 16, 16, 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("layer {layer}: expected {expected:?}, got {got:?}")]
    Layer {
        layer: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Network parameters, one entry per affine layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

/// Activations cached by [`mlp_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl MlpParams {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims
                .windows(2)
                .map(|w| LayerParams::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        if let Some(first) = self.layers.first() {
            dims.push(first.in_dim);
        }
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters in layer order: weights then biases per layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ShapeError> {
        if flat.len() != self.num_params() {
            return Err(ShapeError::Length {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Checks that the layer shapes equal `dims`.
    pub fn validate(&self, dims: &[usize]) -> Result<(), ShapeError> {
        if self.layers.len() + 1 != dims.len() {
            return Err(ShapeError::Length {
                expected: dims.len().saturating_sub(1),
                got: self.layers.len(),
            });
        }
        for (i, (l, w)) in self.layers.iter().zip(dims.windows(2)).enumerate() {
            let ok = l.in_dim == w[0]
                && l.out_dim == w[1]
                && l.weights.len() == w[0] * w[1]
                && l.biases.len() == w[1];
            if !ok {
                return Err(ShapeError::Layer {
                    layer: i,
                    expected: (w[1], w[0]),
                    got: (l.out_dim, l.in_dim),
                });
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`.
pub fn mlp_init(seed: u64, dims: &[usize]) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(dims);
    for l in &mut params.layers {
        let a = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
        for w in &mut l.weights {
            *w = rng.random_range(-a..a);
        }
    }
    params
}

/// Forward pass. `input.len()` must equal the first layer's width.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> (Vec<f64>, MlpTape) {
    assert_eq!(input.len(), params.in_dim(), "input width mismatch");
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut x = input.to_vec();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = layer.affine(&x);
        inputs.push(x);
        x = if i + 1 < n {
            z.iter().map(|&v| v.max(0.0)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
    }
    (x, MlpTape { inputs, pre })
}

/// Reverse pass for the scalar `output_grad . output`.
///
/// Returns parameter gradients shaped like `params` and the input gradient.
pub fn mlp_backward(
    params: &MlpParams,
    tape: &MlpTape,
    output_grad: &[f64],
) -> (MlpParams, Vec<f64>) {
    assert_eq!(
        output_grad.len(),
        params.out_dim(),
        "output gradient width mismatch"
    );
    let n = params.layers.len();
    let mut grads = MlpParams::zeros(&params.dims());
    let mut delta = output_grad.to_vec();
    for i in (0..n).rev() {
        let layer = &params.layers[i];
        if i + 1 < n {
            for (d, z) in delta.iter_mut().zip(&tape.pre[i]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let x = &tape.inputs[i];
        let g = &mut grads.layers[i];
        for (row, d) in delta.iter().enumerate() {
            g.biases[row] = *d;
            for (col, xv) in x.iter().enumerate() {
                g.weights[row * layer.in_dim + col] = d * xv;
            }
        }
        let mut next = vec![0.0; layer.in_dim];
        for (row, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (col, nv) in next.iter_mut().enumerate() {
                *nv += layer.weights[row * layer.in_dim + col] * d;
            }
        }
        delta = next;
    }
    (grads, delta)
}
