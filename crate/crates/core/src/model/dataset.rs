use std::fs;
use std::path::Path;

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples, one per row of `samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Vec<u8>) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Copies the selected rows into a contiguous batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<u8>) {
        let dim = self.dim();
        let mut batch = Matrix::zeros(indices.len(), dim);
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            batch.row_mut(r).copy_from_slice(self.samples.row(i));
            labels.push(self.labels[i]);
        }
        (batch, labels)
    }

    /// The first `n` samples (or all of them if fewer exist).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (samples, labels) = self.gather(&idx);
        Dataset { samples, labels }
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("IDX header truncated reading {what}")))
}

/// Parses an IDX3 image file into rows of pixels scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "expected image magic {IDX_IMAGES_MAGIC} (0x{IDX_IMAGES_MAGIC:08x}), found {magic}"
        )));
    }
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * dim {
        return Err(Error::Format(format!(
            "image payload is {} bytes, header promises {count}x{rows}x{cols}",
            body.len()
        )));
    }
    let data = body.iter().map(|&b| b as f32 / 255.0).collect();
    Matrix::from_vec(count, dim, data)
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "expected label magic {IDX_LABELS_MAGIC} (0x{IDX_LABELS_MAGIC:08x}), found {magic}"
        )));
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "label payload is {} bytes, header promises {count}",
            body.len()
        )));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {bad} outside 0..=9")));
    }
    Ok(body.to_vec())
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)
        .map_err(|e| e.context(images_path.display().to_string()))?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)
        .map_err(|e| e.context(labels_path.display().to_string()))?;
    Dataset::new(images, labels)
}

/// Training and test splits from a directory holding the four standard MNIST files.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

#[cfg(test)]
pub(crate) fn idx_images_bytes(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [count, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

#[cfg(test)]
pub(crate) fn idx_labels_bytes(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
