use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::matrix::{matmul_a_b, matmul_a_bt, matmul_at_b, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    SoftmaxOutput,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::SoftmaxOutput => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::SoftmaxOutput),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// One fully connected layer; `weights` is `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias length {} for {} output units",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Argument("non-finite bias".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Feed-forward stack of fully connected layers ending in a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let want = if i == last {
                Activation::SoftmaxOutput
            } else {
                Activation::Relu
            };
            if layer.activation != want {
                return Err(Error::Argument(format!(
                    "layer {i} has activation {:?}, expected {want:?}",
                    layer.activation
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    /// Replaces one layer's weights, keeping the shape.
    pub fn set_weights(&mut self, index: usize, weights: Matrix) -> Result<()> {
        self.layers[index].weights.check_same_shape(&weights)?;
        self.layers[index].weights = weights;
        Ok(())
    }

    pub fn set_bias(&mut self, index: usize, bias: Vec<f32>) -> Result<()> {
        if bias.len() != self.layers[index].bias.len() {
            return Err(Error::Shape(format!(
                "bias length {} for layer {index} with {} outputs",
                bias.len(),
                self.layers[index].bias.len()
            )));
        }
        self.layers[index].bias = bias;
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }
}

/// He-initialized network: weights ~ N(0, 2/in_dim), zero biases.
pub fn init_network(dims: &[usize], seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 dims, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Argument(format!("zero dimension in {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let data = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng) as f32)
                .collect();
            let activation = if i == last {
                Activation::SoftmaxOutput
            } else {
                Activation::Relu
            };
            Layer::new(
                Matrix::from_vec(fan_out, fan_in, data)?,
                vec![0.0; fan_out],
                activation,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

/// Post-activation outputs of each layer plus the final logits.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[i]` is the output of layer `i`; the last entry holds probabilities.
    pub activations: Vec<Matrix>,
    pub logits: Matrix,
}

impl ForwardPass {
    pub fn probabilities(&self) -> &Matrix {
        self.activations.last().expect("network has layers")
    }

    pub fn predictions(&self) -> Vec<usize> {
        let p = self.probabilities();
        (0..p.rows()).map(|r| argmax(p.row(r))).collect()
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn add_bias(z: &mut Matrix, bias: &[f32]) {
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Runs a batch (one sample per row) through the network.
pub fn forward(network: &Network, batch: &Matrix) -> Result<ForwardPass> {
    if batch.cols() != network.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} but network expects {}",
            batch.cols(),
            network.input_dim()
        )));
    }
    let mut activations: Vec<Matrix> = Vec::with_capacity(network.layers.len());
    let mut logits = Matrix::zeros(0, 0);
    for layer in &network.layers {
        let input = activations.last().unwrap_or(batch);
        let mut z = Matrix::zeros(batch.rows(), layer.out_dim());
        matmul_a_bt(input, &layer.weights, &mut z);
        add_bias(&mut z, &layer.bias);
        match layer.activation {
            Activation::Relu => {
                for v in z.as_mut_slice() {
                    *v = v.max(0.0);
                }
            }
            Activation::SoftmaxOutput => {
                logits = z.clone();
                for r in 0..z.rows() {
                    softmax_in_place(z.row_mut(r));
                }
            }
        }
        activations.push(z);
    }
    Ok(ForwardPass {
        activations,
        logits,
    })
}

/// Per-layer gradients mirroring the network's parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f32>>,
}

/// Mean cross-entropy over a batch of logits.
pub(crate) fn cross_entropy(logits: &Matrix, labels: &[u8]) -> f32 {
    let mut total = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = row.iter().map(|v| (*v as f64 - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[label as usize] as f64;
    }
    (total / labels.len().max(1) as f64) as f32
}

fn check_labels(network: &Network, batch: &Matrix, labels: &[u8]) -> Result<()> {
    if labels.len() != batch.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            batch.rows()
        )));
    }
    if batch.rows() == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let classes = network.output_dim();
    if let Some(bad) = labels.iter().find(|l| **l as usize >= classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Gradients of the mean softmax cross-entropy over `batch`, plus the loss itself.
pub fn backward(network: &Network, batch: &Matrix, labels: &[u8]) -> Result<(GradientSet, f32)> {
    check_labels(network, batch, labels)?;
    let pass = forward(network, batch)?;
    let loss = cross_entropy(&pass.logits, labels);

    let n = batch.rows();
    let scale = 1.0 / n as f32;
    let mut delta = pass.probabilities().clone();
    for (r, &label) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        row[label as usize] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    let depth = network.layers.len();
    let mut weight_grads = vec![Matrix::zeros(0, 0); depth];
    let mut bias_grads = vec![Vec::new(); depth];
    for l in (0..depth).rev() {
        let layer = &network.layers[l];
        let input = if l == 0 { batch } else { &pass.activations[l - 1] };

        let mut dw = Matrix::zeros(layer.out_dim(), layer.in_dim());
        matmul_at_b(&delta, input, &mut dw);
        weight_grads[l] = dw;

        let mut db = vec![0.0f32; layer.out_dim()];
        for r in 0..n {
            for (acc, d) in db.iter_mut().zip(delta.row(r)) {
                *acc += d;
            }
        }
        bias_grads[l] = db;

        if l > 0 {
            let mut prev = Matrix::zeros(n, layer.in_dim());
            matmul_a_b(&delta, &layer.weights, &mut prev);
            for (g, a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok((
        GradientSet {
            weights: weight_grads,
            biases: bias_grads,
        },
        loss,
    ))
}
