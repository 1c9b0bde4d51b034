//! Forward kernels over dense, relative-index sparse and codebook-indirect layers.
//!
//! Every kernel accumulates each output in ascending column order, starting from zero
//! and adding the bias last, so a batch of one is bit-identical to the vector path.

pub mod bench;

use crate::container::{CompressedModel, LayerPayload, QuantizedLayer, SparseIndex};
use crate::error::{Error, Result};
use crate::model::network::softmax_in_place;
use crate::model::{argmax, Dataset, Matrix};
use crate::prune::SparseLayer;
use crate::quant::Codebook;

pub use bench::{benchmark, BenchRow, KernelReport, Representation};

fn check_vec(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn check_batch(x: &Matrix, cols: usize, bias: &[f32], rows: usize) -> Result<()> {
    check_vec("bias", bias.len(), rows)?;
    if x.cols() != cols {
        return Err(Error::Shape(format!("inputs of width {} for a layer with {cols} columns", x.cols())));
    }
    Ok(())
}

/// `y = W x + b`.
pub fn gemv_dense(w: &Matrix, bias: &[f32], x: &[f32]) -> Result<Vec<f32>> {
    check_vec("input", x.len(), w.cols())?;
    check_vec("bias", bias.len(), w.rows())?;
    let mut y = vec![0.0f32; w.rows()];
    dense_row_into(w, bias, x, &mut y);
    Ok(y)
}

fn dense_row_into(w: &Matrix, bias: &[f32], x: &[f32], y: &mut [f32]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = 0.0f32;
        for (wij, xj) in w.row(i).iter().zip(x) {
            acc += wij * xj;
        }
        *yi = acc + bias[i];
    }
}

/// `Y = X Wᵀ + b` for a batch of row vectors.
pub fn gemm_dense(w: &Matrix, bias: &[f32], x: &Matrix) -> Result<Matrix> {
    check_batch(x, w.cols(), bias, w.rows())?;
    let mut y = Matrix::zeros(x.rows(), w.rows());
    for s in 0..x.rows() {
        dense_row_into(w, bias, x.row(s), y.row_mut(s));
    }
    Ok(y)
}

/// Sparse product decoding relative diffs on the fly.
pub fn spmv_relative(layer: &SparseLayer, bias: &[f32], x: &[f32]) -> Result<Vec<f32>> {
    check_vec("input", x.len(), layer.cols())?;
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(spmm_relative(layer, bias, &xs)?.into_vec())
}

pub fn spmm_relative(layer: &SparseLayer, bias: &[f32], x: &Matrix) -> Result<Matrix> {
    let (rows, cols) = layer.shape();
    check_batch(x, cols, bias, rows)?;
    let batch = x.rows();
    let mut acc = vec![0.0f32; batch * rows];
    let mut pos: usize = usize::MAX;
    for e in layer.stream().entries() {
        pos = pos.wrapping_add(e.diff as usize + 1);
        if pos >= rows * cols {
            return Err(Error::Corruption(format!("sparse position {pos} beyond {rows}x{cols}")));
        }
        if e.is_filler() {
            continue;
        }
        let (r, c) = (pos / cols, pos % cols);
        for s in 0..batch {
            acc[s * rows + r] += e.value * x.get(s, c);
        }
    }
    finish(acc, bias, batch, rows)
}

fn finish(mut acc: Vec<f32>, bias: &[f32], batch: usize, rows: usize) -> Result<Matrix> {
    for s in 0..batch {
        for (a, b) in acc[s * rows..(s + 1) * rows].iter_mut().zip(bias) {
            *a += b;
        }
    }
    Matrix::from_vec(batch, rows, acc)
}

/// Indirect-lookup sparse product: each contribution is `codebook[index] · x_j`.
/// Works on raw streams, so out-of-range indices are reported as corruption.
pub fn spmv_quantized(
    shape: (usize, usize),
    index: &SparseIndex,
    indices: &[u16],
    codebook: &Codebook,
    bias: &[f32],
    x: &[f32],
) -> Result<Vec<f32>> {
    check_vec("input", x.len(), shape.1)?;
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(spmm_quantized(shape, index, indices, codebook, bias, &xs)?.into_vec())
}

pub fn spmm_quantized(
    (rows, cols): (usize, usize),
    index: &SparseIndex,
    indices: &[u16],
    codebook: &Codebook,
    bias: &[f32],
    x: &Matrix,
) -> Result<Matrix> {
    check_batch(x, cols, bias, rows)?;
    if index.logical_length() != rows * cols {
        return Err(Error::Shape(format!(
            "sparse index over {} positions for a {rows}x{cols} layer",
            index.logical_length()
        )));
    }
    let batch = x.rows();
    let book = codebook.centroids();
    let mut acc = vec![0.0f32; batch * rows];
    let mut next = indices.iter();
    let mut pos: usize = usize::MAX;
    for (i, (&d, &filler)) in index.diffs().iter().zip(index.fillers()).enumerate() {
        pos = pos.wrapping_add(d as usize + 1);
        if filler {
            continue;
        }
        let k = *next
            .next()
            .ok_or_else(|| Error::Corruption(format!("index stream ends at entry {i}")))? as usize;
        let w = *book
            .get(k)
            .ok_or_else(|| Error::Corruption(format!("codebook index {k} at entry {i} >= k = {}", book.len())))?;
        let (r, c) = (pos / cols, pos % cols);
        for s in 0..batch {
            acc[s * rows + r] += w * x.get(s, c);
        }
    }
    if next.next().is_some() {
        return Err(Error::Corruption("index stream longer than the sparse index".into()));
    }
    finish(acc, bias, batch, rows)
}

pub fn spmm_quantized_layer(layer: &QuantizedLayer, bias: &[f32], x: &Matrix) -> Result<Matrix> {
    spmm_quantized(
        (layer.rows(), layer.cols()),
        layer.index(),
        layer.indices(),
        layer.codebook(),
        bias,
        x,
    )
}

/// Applies one stored layer in its own representation; Huffman layers are decoded to
/// their quantized streams first.
pub fn apply_layer(payload: &LayerPayload, bias: &[f32], x: &Matrix) -> Result<Matrix> {
    match payload {
        LayerPayload::Dense(w) => gemm_dense(w, bias, x),
        LayerPayload::Pruned(s) => spmm_relative(s, bias, x),
        LayerPayload::Quantized(q) => spmm_quantized_layer(q, bias, x),
        LayerPayload::Huffman(h) => spmm_quantized_layer(&h.decode()?, bias, x),
    }
}

/// Executable form of a model: Huffman streams decoded once up front.
#[derive(Debug, Clone)]
pub struct CompressedRunner {
    layers: Vec<(String, LayerPayload)>,
    biases: Vec<Vec<f32>>,
}

impl CompressedRunner {
    pub fn new(model: &CompressedModel) -> Result<Self> {
        let layers = model
            .layers()
            .iter()
            .map(|r| {
                let payload = match &r.payload {
                    LayerPayload::Huffman(h) => {
                        LayerPayload::Quantized(h.decode().map_err(|e| e.context(format!("layer {}", r.name)))?)
                    }
                    p => p.clone(),
                };
                Ok((r.name.clone(), payload))
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::Argument("model has no layers".into()));
        }
        Ok(Self {
            layers,
            biases: model.biases().to_vec(),
        })
    }

    /// Class probabilities: ReLU between layers, softmax at the end.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let depth = self.layers.len();
        let mut h = x.clone();
        for (i, ((name, payload), bias)) in self.layers.iter().zip(&self.biases).enumerate() {
            h = apply_layer(payload, bias, &h).map_err(|e| e.context(format!("layer {name}")))?;
            if i + 1 < depth {
                for v in h.as_mut_slice() {
                    *v = v.max(0.0);
                }
            }
        }
        for s in 0..h.rows() {
            softmax_in_place(h.row_mut(s));
        }
        Ok(h)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        if data.is_empty() {
            return Err(Error::Argument("prediction on an empty dataset".into()));
        }
        let mut out = Vec::with_capacity(data.len());
        for start in (0..data.len()).step_by(1000) {
            let idx: Vec<usize> = (start..(start + 1000).min(data.len())).collect();
            let probs = self.forward(&data.gather(&idx).0)?;
            out.extend((0..probs.rows()).map(|s| argmax(probs.row(s))));
        }
        Ok(out)
    }
}

/// Outcome of running a model entirely through the compressed kernels.
#[derive(Debug, Clone)]
pub struct CompressedEval {
    pub predictions: Vec<usize>,
    pub error: f64,
}

pub fn run_network_compressed(model: &CompressedModel, data: &Dataset) -> Result<CompressedEval> {
    let predictions = CompressedRunner::new(model)?.predict(data)?;
    let wrong = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| **p != **l as usize)
        .count();
    Ok(CompressedEval {
        error: wrong as f64 / data.len() as f64,
        predictions,
    })
}

/// `‖a − b‖ / ‖b‖`, or the absolute norm when `b` is zero.
pub fn relative_difference(a: &[f32], b: &[f32]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        num += (*x as f64 - *y as f64).powi(2);
        den += (*y as f64).powi(2);
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
