//! Magnitude pruning and the relative-index sparse format.

pub mod relative;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sgd_train, Dataset, Matrix, Network, TrainConfig};

pub use relative::{
    csr_storage_count, decode_relative, encode_relative, RelEntry, RelativeIndexStream, SparseLayer,
    DEFAULT_FC_INDEX_BITS, MAX_INDEX_BITS,
};

/// Per-layer 0/1 masks matching the weight shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    layers: Vec<Matrix>,
}

impl PruneMask {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        for (i, m) in layers.iter().enumerate() {
            if m.as_slice().iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::Argument(format!("mask {i} has entries other than 0/1")));
            }
        }
        Ok(Self { layers })
    }

    pub fn all_ones(network: &Network) -> Self {
        Self {
            layers: network
                .layers()
                .iter()
                .map(|l| Matrix::filled(l.out_dim(), l.in_dim(), 1.0))
                .collect(),
        }
    }

    /// Mask of the nonzero weights of an already pruned network.
    pub fn from_nonzero(network: &Network) -> Self {
        Self {
            layers: network
                .layers()
                .iter()
                .map(|l| {
                    let data = l
                        .weights
                        .as_slice()
                        .iter()
                        .map(|w| if *w != 0.0 { 1.0 } else { 0.0 })
                        .collect();
                    Matrix::from_vec(l.out_dim(), l.in_dim(), data).expect("same shape")
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.layers[i]
    }

    pub fn layer_density(&self, i: usize) -> f64 {
        density(&self.layers[i])
    }

    pub fn density(&self) -> f64 {
        let total: usize = self.layers.iter().map(Matrix::len).sum();
        let kept: usize = self.layers.iter().map(Matrix::count_nonzero).sum();
        kept as f64 / total.max(1) as f64
    }
}

pub fn density(mask: &Matrix) -> f64 {
    mask.count_nonzero() as f64 / mask.len().max(1) as f64
}

/// Per-layer target densities, relative-index width and the retraining schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub densities: Vec<f64>,
    pub index_bits: u8,
    pub retrain: TrainConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            densities: vec![0.08, 0.09, 0.26],
            index_bits: DEFAULT_FC_INDEX_BITS,
            retrain: TrainConfig::default(),
        }
    }
}

fn check_density(target: f64) -> Result<()> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Argument(format!(
            "target density must be in (0, 1], got {target}"
        )));
    }
    Ok(())
}

/// Magnitude threshold that keeps `round(target · n)` weights with `|w| > threshold`.
///
/// Weights tied with the threshold are dropped, so ties can only lower the kept share.
pub fn compute_threshold(matrix: &Matrix, target_density: f64) -> Result<f32> {
    check_density(target_density)?;
    let n = matrix.len();
    let keep = ((target_density * n as f64).round() as usize).min(n);
    if keep == n {
        return Ok(0.0);
    }
    let mut mags: Vec<f32> = matrix.as_slice().iter().map(|w| w.abs()).collect();
    let cut = n - keep - 1;
    let (_, t, _) = mags.select_nth_unstable_by(cut, f32::total_cmp);
    Ok(*t)
}

/// `mask_ij = 1` iff `|w_ij| > threshold`.
pub fn prune(matrix: &Matrix, threshold: f32) -> Result<Matrix> {
    if !(threshold >= 0.0) {
        return Err(Error::Argument(format!("threshold must be non-negative, got {threshold}")));
    }
    let data = matrix
        .as_slice()
        .iter()
        .map(|w| if w.abs() > threshold { 1.0 } else { 0.0 })
        .collect();
    Matrix::from_vec(matrix.rows(), matrix.cols(), data)
}

/// Masks for a network at the given per-layer densities.
pub fn magnitude_masks(network: &Network, densities: &[f64]) -> Result<PruneMask> {
    if densities.len() != network.layers().len() {
        return Err(Error::Argument(format!(
            "{} densities for {} layers",
            densities.len(),
            network.layers().len()
        )));
    }
    let layers = network
        .layers()
        .iter()
        .zip(densities)
        .map(|(l, &d)| prune(&l.weights, compute_threshold(&l.weights, d)?))
        .collect::<Result<Vec<_>>>()?;
    PruneMask::new(layers)
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub network: Network,
    pub mask: PruneMask,
    pub losses: Vec<f32>,
}

/// Prunes each layer to its target density once, then retrains the survivors.
pub fn prune_and_retrain(network: Network, data: &Dataset, config: &PruneConfig) -> Result<PruneOutcome> {
    let mask = magnitude_masks(&network, &config.densities)?;
    let out = sgd_train(network, data, &config.retrain, Some(mask.layers()))?;
    Ok(PruneOutcome {
        network: out.network,
        mask,
        losses: out.losses,
    })
}
