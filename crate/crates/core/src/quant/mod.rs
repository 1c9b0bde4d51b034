//! Trained quantization: per-layer k-means weight sharing and codebook fine-tuning.

pub mod kmeans;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::train::run_batches;
use crate::model::{backward, Dataset, Matrix, Network, TrainConfig};
use crate::prune::SparseLayer;

pub use kmeans::{init_centroids, kmeans, wcss, CentroidInit, ClusterResult, InitMethod};

/// Shared weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(centroids: Vec<f32>) -> Result<Self> {
        if centroids.is_empty() || centroids.len() > 1 << 16 {
            return Err(Error::Argument(format!(
                "codebook size {} outside 1..=65536",
                centroids.len()
            )));
        }
        if let Some(c) = centroids.iter().find(|c| !c.is_finite()) {
            return Err(Error::Argument(format!("non-finite centroid {c}")));
        }
        Ok(Self { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn get(&self, index: u16) -> Option<f32> {
        self.centroids.get(index as usize).copied()
    }

    /// Bits per stored index: `ceil(log2 k)`, at least one.
    pub fn index_bits(&self) -> u8 {
        bits_for(self.len())
    }

    /// `c ← c − lr · grad` for every centroid.
    pub fn apply_gradient(&mut self, grads: &[f32], lr: f32) -> Result<()> {
        if grads.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} centroid gradients for {} centroids",
                grads.len(),
                self.len()
            )));
        }
        for (c, g) in self.centroids.iter_mut().zip(grads) {
            *c -= lr * g;
        }
        Ok(())
    }
}

/// Bits needed to index `k` symbols, with a one-bit floor.
pub fn bits_for(k: usize) -> u8 {
    let mut bits = 0u8;
    while (1usize << bits) < k {
        bits += 1;
    }
    bits.max(1)
}

/// Cluster index of every surviving weight, in row-major order of the survivors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexAssignment {
    indices: Vec<u16>,
}

impl IndexAssignment {
    pub fn new(indices: Vec<u16>, k: usize) -> Result<Self> {
        if let Some(i) = indices.iter().find(|i| **i as usize >= k) {
            return Err(Error::Corruption(format!("cluster index {i} out of range for k = {k}")));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: u8,
    pub init: InitMethod,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub finetune: TrainConfig,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 6,
            init: InitMethod::Linear,
            max_iters: 100,
            rel_tol: 1e-6,
            seed: 7,
            finetune: TrainConfig {
                learning_rate: 1e-3,
                epochs: 2,
                batch_size: 32,
                seed: 11,
                weight_decay: 0.0,
            },
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::Argument(format!("quantization bits must be in 1..=16, got {}", self.bits)));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::Argument("rel_tol must be non-negative".into()));
        }
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        1 << self.bits
    }
}

/// Result of clustering one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub codebook: Codebook,
    pub assignment: IndexAssignment,
    pub wcss: f64,
    pub iterations_run: usize,
    /// Set when the layer had fewer distinct survivors than requested clusters.
    pub note: Option<String>,
}

/// Clusters the surviving (non-filler) values of a pruned layer.
pub fn quantize_layer(layer: &SparseLayer, config: &QuantConfig) -> Result<QuantizedWeights> {
    config.validate()?;
    let values = layer.values();
    quantize_values(&values, config)
}

pub fn quantize_values(values: &[f32], config: &QuantConfig) -> Result<QuantizedWeights> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::Argument("layer has no surviving weights to quantize".into()));
    }
    let k = config.clusters();
    let mut distinct: Vec<f32> = values.to_vec();
    distinct.sort_by(f32::total_cmp);
    distinct.dedup();
    if distinct.len() <= k {
        // Every distinct value gets its own centroid.
        let assignment = values
            .iter()
            .map(|v| distinct.partition_point(|d| d < v) as u16)
            .collect();
        let note = (distinct.len() < k).then(|| {
            format!("{} distinct survivors for k = {k}; codebook shrunk", distinct.len())
        });
        return Ok(QuantizedWeights {
            assignment: IndexAssignment::new(assignment, distinct.len())?,
            codebook: Codebook::new(distinct)?,
            wcss: 0.0,
            iterations_run: 0,
            note,
        });
    }
    let init = init_centroids(values, k, config.init, config.seed)?;
    let result = kmeans(values, &init.centroids, config.max_iters, config.rel_tol)?;
    Ok(QuantizedWeights {
        codebook: Codebook::new(result.centroids)?,
        assignment: IndexAssignment::new(result.assignment, k)?,
        wcss: result.wcss,
        iterations_run: result.iterations_run,
        note: init.fallback,
    })
}

fn check_assignment(mask: &Matrix, assignment: &IndexAssignment) -> Result<()> {
    let survivors = mask.count_nonzero();
    if survivors != assignment.len() {
        return Err(Error::Shape(format!(
            "{} cluster indices for {survivors} surviving weights",
            assignment.len()
        )));
    }
    Ok(())
}

/// Sum of weight gradients per cluster over surviving positions.
pub fn centroid_gradients(
    weight_grads: &Matrix,
    assignment: &IndexAssignment,
    mask: &Matrix,
    k: usize,
) -> Result<Vec<f32>> {
    weight_grads.check_same_shape(mask)?;
    check_assignment(mask, assignment)?;
    let mut acc = vec![0.0f64; k];
    let mut next = assignment.indices().iter();
    for (g, m) in weight_grads.as_slice().iter().zip(mask.as_slice()) {
        if *m != 0.0 {
            let c = *next.next().expect("count checked") as usize;
            if c >= k {
                return Err(Error::Corruption(format!("cluster index {c} >= k = {k}")));
            }
            acc[c] += *g as f64;
        }
    }
    Ok(acc.into_iter().map(|g| g as f32).collect())
}

/// Dense weights where each survivor reads its centroid and everything else is zero.
pub fn materialize(codebook: &Codebook, assignment: &IndexAssignment, mask: &Matrix) -> Result<Matrix> {
    check_assignment(mask, assignment)?;
    let mut out = Matrix::zeros(mask.rows(), mask.cols());
    let mut next = assignment.indices().iter();
    for (w, m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
        if *m != 0.0 {
            let i = *next.next().expect("count checked");
            *w = codebook
                .get(i)
                .ok_or_else(|| Error::Corruption(format!("cluster index {i} >= k = {}", codebook.len())))?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub codebooks: Vec<Codebook>,
    /// Network with weights materialized from the tuned codebooks and tuned biases.
    pub network: Network,
    pub losses: Vec<f32>,
}

/// SGD on the shared centroids: dense gradients are grouped by cluster index and each
/// centroid moves by the summed gradient of its members. Assignments stay fixed and
/// biases take plain SGD steps.
pub fn finetune_quantized(
    network: &Network,
    codebooks: &[Codebook],
    assignments: &[IndexAssignment],
    masks: &[Matrix],
    data: &Dataset,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let depth = network.layers().len();
    if codebooks.len() != depth || assignments.len() != depth || masks.len() != depth {
        return Err(Error::Shape(format!(
            "need one codebook, assignment and mask per layer ({depth})"
        )));
    }
    let mut net = network.clone();
    let mut books = codebooks.to_vec();
    for l in 0..depth {
        net.set_weights(l, materialize(&books[l], &assignments[l], &masks[l])?)?;
    }
    let lr = config.learning_rate;
    let losses = run_batches(data, config, |batch, labels| {
        let (grads, loss) = backward(&net, batch, labels)?;
        for l in 0..depth {
            let cg = centroid_gradients(&grads.weights[l], &assignments[l], &masks[l], books[l].len())?;
            books[l].apply_gradient(&cg, lr)?;
            let weights = materialize(&books[l], &assignments[l], &masks[l])?;
            let bias = net.layer(l)
                .bias
                .iter()
                .zip(&grads.biases[l])
                .map(|(b, g)| b - lr * g)
                .collect();
            net.set_weights(l, weights)?;
            net.set_bias(l, bias)?;
        }
        Ok(loss)
    })?;
    Ok(FinetuneOutcome {
        codebooks: books,
        network: net,
        losses,
    })
}

/// `r = n·b / (n·log2 k + k·b)` with the exact (possibly fractional) `log2 k`.
pub fn compression_rate(n: usize, b: u32, k: usize) -> f64 {
    let (n, b, k) = (n as f64, b as f64, k as f64);
    n * b / (n * k.log2() + k * b)
}
