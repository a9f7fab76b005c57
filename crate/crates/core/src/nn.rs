//! Minimal dense feed-forward network with exact manual backpropagation.
//!
//! The model is a stack of affine layers with ReLU hidden activations and a
//! raw-logit (identity) output head. Gradients are computed in closed form
//! and flattened into a single canonical parameter order:
//! `[W0 row-major, b0, W1, b1, ...]`. Forward and backward are pure
//! functions of inputs and parameters; identical inputs produce bit-identical
//! outputs.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    /// For ReLU the subgradient at exactly zero is taken as 0.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
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

/// A dense layer `y = activation(W x + b)` with `W` of shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: DenseMatrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("bias contains non-finite entry".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    #[inline]
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn param_count(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.bias.len()
    }

    /// Batch forward: `x` is (batch, in_dim), output is (batch, out_dim).
    fn forward(&self, x: &DenseMatrix) -> DenseMatrix {
        let batch = x.rows();
        let out_dim = self.out_dim();
        let in_dim = self.in_dim();
        let mut out = DenseMatrix::zeros(batch, out_dim);
        for b in 0..batch {
            let xr = x.row(b);
            let or = out.row_mut(b);
            for (o, ov) in or.iter_mut().enumerate() {
                let wr = self.weights.row(o);
                let mut acc = self.bias[o];
                for i in 0..in_dim {
                    acc += wr[i] * xr[i];
                }
                *ov = self.activation.apply(acc);
            }
        }
        out
    }
}

/// Flattened parameter gradient in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatGradient {
    values: Vec<f64>,
}

impl FlatGradient {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A mini-batch: inputs with aligned labels and per-sample loss weights.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != inputs.rows() || weights.len() != inputs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "batch rows {} vs labels {} vs weights {}",
                inputs.rows(),
                labels.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(
                "per-sample weights must be finite and >= 0".into(),
            ));
        }
        Ok(Self {
            inputs,
            labels,
            weights,
        })
    }

    /// Batch with all weights set to 1.
    pub fn unweighted(inputs: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        let n = inputs.rows();
        Self::new(inputs, labels, vec![1.0; n])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense classifier with an expandable output head.
///
/// The head only grows; expanding preserves existing rows bit-exactly so
/// old-class logits are unchanged on any input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    input_dim: usize,
}

fn init_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl MlpModel {
    /// Builds a ReLU MLP with an identity-output head. Weights are seeded
    /// uniform in ±1/√fan_in, biases zero.
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("layer dims must be > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &h in hidden {
            let w = DenseMatrix::from_vec(h, in_dim, init_uniform(&mut rng, in_dim, h * in_dim))?;
            layers.push(Layer::new(w, vec![0.0; h], Activation::Relu)?);
            in_dim = h;
        }
        let w = DenseMatrix::from_vec(
            output_dim,
            in_dim,
            init_uniform(&mut rng, in_dim, output_dim * in_dim),
        )?;
        layers.push(Layer::new(w, vec![0.0; output_dim], Activation::Identity)?);
        Ok(Self { layers, input_dim })
    }

    /// Assembles a model from explicit layers, checking that dimensions
    /// chain and the final activation is identity.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidConfig("model needs at least one layer".into()))?;
        let input_dim = first.in_dim();
        let mut prev_out = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != prev_out {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} expects input {} but previous layer outputs {}",
                    i,
                    layer.in_dim(),
                    prev_out
                )));
            }
            prev_out = layer.out_dim();
        }
        if layers.last().unwrap().activation() != Activation::Identity {
            return Err(Error::InvalidConfig(
                "final layer must have identity activation (raw logits)".into(),
            ));
        }
        Ok(Self { layers, input_dim })
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim()).unwrap_or(0)
    }

    #[inline]
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Forward pass; returns (batch, output_dim) logits.
    pub fn forward(&self, inputs: &DenseMatrix) -> Result<DenseMatrix> {
        if inputs.cols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        let mut acts = self.layers[0].forward(inputs);
        for layer in &self.layers[1..] {
            acts = layer.forward(&acts);
        }
        Ok(acts)
    }

    /// Exact parameter gradient of the scalar whose logit-gradient is
    /// `dlogits`, flattened in canonical order. Recomputes activations
    /// internally, so it pairs with any upstream loss.
    pub fn backward(&self, inputs: &DenseMatrix, dlogits: &DenseMatrix) -> Result<FlatGradient> {
        if inputs.cols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.input_dim
            )));
        }
        if dlogits.rows() != inputs.rows() || dlogits.cols() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dlogits is {}x{}, expected {}x{}",
                dlogits.rows(),
                dlogits.cols(),
                inputs.rows(),
                self.output_dim()
            )));
        }

        // Post-activation outputs per layer.
        let mut acts: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { inputs } else { &acts[i - 1] };
            acts.push(layer.forward(x));
        }

        let batch = inputs.rows();
        let mut d_weights: Vec<DenseMatrix> = self
            .layers
            .iter()
            .map(|l| DenseMatrix::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let mut d_bias: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect();

        // dz for the current layer; final activation is identity so the
        // output dz is dlogits itself.
        let mut dz = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x: &DenseMatrix = if l == 0 { inputs } else { &acts[l - 1] };

            for b in 0..batch {
                let dzr = dz.row(b);
                let xr = x.row(b);
                for o in 0..layer.out_dim() {
                    let g = dzr[o];
                    if g == 0.0 {
                        continue;
                    }
                    d_bias[l][o] += g;
                    let wr = d_weights[l].row_mut(o);
                    for i in 0..layer.in_dim() {
                        wr[i] += g * xr[i];
                    }
                }
            }

            if l > 0 {
                let prev = &self.layers[l - 1];
                let mut dz_prev = DenseMatrix::zeros(batch, layer.in_dim());
                for b in 0..batch {
                    let dzr = dz.row(b);
                    for o in 0..layer.out_dim() {
                        let g = dzr[o];
                        if g == 0.0 {
                            continue;
                        }
                        let wr = layer.weights().row(o);
                        let dr = dz_prev.row_mut(b);
                        for i in 0..layer.in_dim() {
                            dr[i] += g * wr[i];
                        }
                    }
                    let ar = acts[l - 1].row(b);
                    let dr = dz_prev.row_mut(b);
                    for i in 0..layer.in_dim() {
                        dr[i] *= prev.activation().grad_from_output(ar[i]);
                    }
                }
                dz = dz_prev;
            }
        }

        let mut flat = Vec::with_capacity(self.parameter_count());
        for l in 0..self.layers.len() {
            flat.extend_from_slice(d_weights[l].values());
            flat.extend_from_slice(&d_bias[l]);
        }
        Ok(FlatGradient::from_vec(flat))
    }

    /// In-place SGD update `θ ← θ − lr·g` in canonical order.
    pub fn sgd_step(&mut self, grad: &FlatGradient, lr: f64) -> Result<()> {
        if grad.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "gradient length {} does not match parameter count {}",
                grad.len(),
                self.parameter_count()
            )));
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        let g = grad.values();
        let mut off = 0;
        for layer in &mut self.layers {
            let wlen = layer.weights.rows() * layer.weights.cols();
            for (w, gv) in layer.weights.values_mut().iter_mut().zip(&g[off..off + wlen]) {
                *w -= lr * gv;
            }
            off += wlen;
            let blen = layer.bias.len();
            for (b, gv) in layer.bias.iter_mut().zip(&g[off..off + blen]) {
                *b -= lr * gv;
            }
            off += blen;
        }
        Ok(())
    }

    /// Widens the output head to `new_output_dim`. Existing rows are kept
    /// bit-exactly; new rows are seeded uniform in ±1/√fan_in with zero bias
    /// so fresh-class logits start small.
    pub fn expand_head(&mut self, new_output_dim: usize, seed: u64) -> Result<()> {
        let old = self.output_dim();
        if new_output_dim <= old {
            return Err(Error::InvalidConfig(format!(
                "head can only grow: current {old}, requested {new_output_dim}"
            )));
        }
        let last = self.layers.last_mut().unwrap();
        let in_dim = last.in_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extra = new_output_dim - old;

        let mut values = last.weights.values().to_vec();
        values.extend(init_uniform(&mut rng, in_dim, extra * in_dim));
        last.weights = DenseMatrix::from_vec(new_output_dim, in_dim, values)?;
        last.bias.extend(std::iter::repeat(0.0).take(extra));
        Ok(())
    }

    /// For a head expansion to `new_output_dim`, maps each post-expansion
    /// parameter index to its pre-expansion index; `None` marks parameters
    /// that do not exist yet (the new head rows and biases). Must be called
    /// before the expansion.
    pub fn head_expansion_param_map(&self, new_output_dim: usize) -> Result<Vec<Option<usize>>> {
        let old_out = self.output_dim();
        if new_output_dim <= old_out {
            return Err(Error::InvalidConfig(format!(
                "head can only grow: current {old_out}, requested {new_output_dim}"
            )));
        }
        let last = self.layers.last().unwrap();
        let in_dim = last.in_dim();
        let prefix: usize = self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::param_count)
            .sum();
        let old_w = old_out * in_dim;
        let new_w = new_output_dim * in_dim;

        let total = prefix + new_w + new_output_dim;
        let mut map = Vec::with_capacity(total);
        for p in 0..total {
            map.push(if p < prefix + old_w {
                Some(p) // untouched layers plus the surviving weight rows
            } else if p < prefix + new_w {
                None // new weight rows
            } else if p < prefix + new_w + old_out {
                Some(p - (new_w - old_w)) // surviving biases, shifted
            } else {
                None // new biases
            });
        }
        Ok(map)
    }

    /// All parameters flattened in canonical order.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.values());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Overwrites all parameters from a canonical-order vector.
    pub fn set_params_vec(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let wlen = layer.weights.rows() * layer.weights.cols();
            layer
                .weights
                .values_mut()
                .copy_from_slice(&params[off..off + wlen]);
            off += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&params[off..off + blen]);
            off += blen;
        }
        Ok(())
    }
}
