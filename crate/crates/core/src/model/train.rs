use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::matrix::Matrix;
use super::network::{backward, forward, Network};
use crate::error::{Error, Result};

/// Mini-batch SGD schedule (constant learning rate, optional L2 decay on weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 1,
            weight_decay: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Argument("weight decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }
}

/// Shared epoch/batch loop: shuffles with the config seed and calls `step` once per batch.
///
/// `step` returns the batch loss; non-finite losses abort with the step index.
pub(crate) fn run_batches<F>(data: &Dataset, config: &TrainConfig, mut step: F) -> Result<Vec<f32>>
where
    F: FnMut(&Matrix, &[u8]) -> Result<f32>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs * config.steps_per_epoch(data.len()));
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (batch, labels) = data.gather(chunk);
            let loss = step(&batch, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: history.len(),
                    loss,
                });
            }
            history.push(loss);
        }
    }
    Ok(history)
}

fn check_mask(network: &Network, mask: &[Matrix]) -> Result<()> {
    if mask.len() != network.layers().len() {
        return Err(Error::Shape(format!(
            "{} mask layers for a {}-layer network",
            mask.len(),
            network.layers().len()
        )));
    }
    for (layer, m) in network.layers().iter().zip(mask) {
        layer.weights.check_same_shape(m)?;
    }
    Ok(())
}

fn apply_mask(weights: &mut Matrix, mask: &Matrix) {
    for (w, m) in weights.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        if *m == 0.0 {
            *w = 0.0;
        }
    }
}

/// Trained network with its per-step loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub losses: Vec<f32>,
}

/// Mini-batch SGD. With a mask, masked-out weights are held at exactly zero.
pub fn sgd_train(
    network: Network,
    data: &Dataset,
    config: &TrainConfig,
    mask: Option<&[Matrix]>,
) -> Result<TrainOutcome> {
    if data.dim() != network.input_dim() {
        return Err(Error::Shape(format!(
            "dataset width {} vs network input {}",
            data.dim(),
            network.input_dim()
        )));
    }
    let mut net = network;
    if let Some(mask) = mask {
        check_mask(&net, mask)?;
        for (layer, m) in net.layers_mut().iter_mut().zip(mask) {
            apply_mask(&mut layer.weights, m);
        }
    }
    let lr = config.learning_rate;
    let decay = config.weight_decay;
    let losses = run_batches(data, config, |batch, labels| {
        let (grads, loss) = backward(&net, batch, labels)?;
        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            for (w, g) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(grads.weights[l].as_slice())
            {
                *w -= lr * (g + decay * *w);
            }
            for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                *b -= lr * g;
            }
            if let Some(mask) = mask {
                apply_mask(&mut layer.weights, &mask[l]);
            }
        }
        Ok(loss)
    })?;
    Ok(TrainOutcome {
        network: net,
        losses,
    })
}

/// Top-1 error rate over the dataset.
pub fn evaluate(network: &Network, data: &Dataset) -> Result<f64> {
    let predictions = predict(network, data)?;
    let wrong = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| **p != **l as usize)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Predicted class for each sample, evaluated in fixed-size chunks.
pub fn predict(network: &Network, data: &Dataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    const CHUNK: usize = 1000;
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let (batch, _) = data.gather(chunk);
        out.extend(forward(network, &batch)?.predictions());
    }
    Ok(out)
}
