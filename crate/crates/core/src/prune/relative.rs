//! Relative-index sparse layers.
//!
//! Surviving weights are walked in row-major order and each stores the gap to the
//! previous survivor as `gap - 1` in `bits_per_index` bits, so gaps `1..=2^bits` are
//! representable. Larger gaps are bridged with filler entries (stored `2^bits - 1`,
//! value `0.0`) that each advance the position by `2^bits`.

use crate::error::{Error, Result};
use crate::model::Matrix;

pub const MAX_INDEX_BITS: u8 = 16;
pub const DEFAULT_FC_INDEX_BITS: u8 = 5;

/// One stored entry: `diff` is the gap minus one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelEntry {
    pub diff: u16,
    pub value: f32,
}

impl RelEntry {
    /// Fillers are the only zero-valued entries; the encoder never stores a genuine zero.
    pub fn is_filler(&self) -> bool {
        self.value == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeIndexStream {
    bits_per_index: u8,
    entries: Vec<RelEntry>,
    logical_length: usize,
}

impl RelativeIndexStream {
    pub fn new(bits_per_index: u8, entries: Vec<RelEntry>, logical_length: usize) -> Result<Self> {
        check_bits(bits_per_index)?;
        let limit = 1u32 << bits_per_index;
        if let Some(e) = entries.iter().find(|e| u32::from(e.diff) >= limit) {
            return Err(Error::Corruption(format!(
                "stored diff {} does not fit in {bits_per_index} bits",
                e.diff
            )));
        }
        if let Some(e) = entries.iter().find(|e| !e.value.is_finite()) {
            return Err(Error::Corruption(format!("non-finite value {}", e.value)));
        }
        Ok(Self {
            bits_per_index,
            entries,
            logical_length,
        })
    }

    pub fn bits_per_index(&self) -> u8 {
        self.bits_per_index
    }

    pub fn entries(&self) -> &[RelEntry] {
        &self.entries
    }

    pub fn logical_length(&self) -> usize {
        self.logical_length
    }

    pub fn filler_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_filler()).count()
    }

    /// Visits `(absolute position, entry)` in order, rejecting walks past the end.
    pub fn walk(&self, mut f: impl FnMut(usize, &RelEntry)) -> Result<()> {
        let mut pos: i64 = -1;
        for (i, e) in self.entries.iter().enumerate() {
            pos += i64::from(e.diff) + 1;
            if pos as usize >= self.logical_length {
                return Err(Error::Corruption(format!(
                    "entry {i} decodes to position {pos}, past logical length {}",
                    self.logical_length
                )));
            }
            f(pos as usize, e);
        }
        Ok(())
    }
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_INDEX_BITS {
        return Err(Error::Argument(format!(
            "bits per index must be in 1..={MAX_INDEX_BITS}, got {bits}"
        )));
    }
    Ok(())
}

/// A pruned layer in relative-index form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLayer {
    rows: usize,
    cols: usize,
    stream: RelativeIndexStream,
    nnz: usize,
}

impl SparseLayer {
    pub fn new(rows: usize, cols: usize, stream: RelativeIndexStream) -> Result<Self> {
        if stream.logical_length() != rows * cols {
            return Err(Error::Consistency(format!(
                "stream covers {} positions, layer is {rows}x{cols}",
                stream.logical_length()
            )));
        }
        let nnz = stream.entries().len() - stream.filler_count();
        Ok(Self {
            rows,
            cols,
            stream,
            nnz,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn stream(&self) -> &RelativeIndexStream {
        &self.stream
    }

    /// Genuine (non-filler) entries.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn entry_count(&self) -> usize {
        self.stream.entries().len()
    }

    /// Surviving values in row-major order (fillers skipped).
    pub fn values(&self) -> Vec<f32> {
        self.stream
            .entries()
            .iter()
            .filter(|e| !e.is_filler())
            .map(|e| e.value)
            .collect()
    }

    /// Same sparsity structure with the genuine values replaced in order.
    pub fn with_values(&self, values: &[f32]) -> Result<SparseLayer> {
        if values.len() != self.nnz {
            return Err(Error::Shape(format!(
                "{} replacement values for {} survivors",
                values.len(),
                self.nnz
            )));
        }
        if values.iter().any(|v| *v == 0.0) {
            return Err(Error::Argument("replacement values must be nonzero".into()));
        }
        let mut next = values.iter();
        let entries = self
            .stream
            .entries()
            .iter()
            .map(|e| {
                if e.is_filler() {
                    *e
                } else {
                    RelEntry {
                        diff: e.diff,
                        value: *next.next().expect("length checked"),
                    }
                }
            })
            .collect();
        SparseLayer::new(
            self.rows,
            self.cols,
            RelativeIndexStream::new(self.stream.bits_per_index(), entries, self.stream.logical_length())?,
        )
    }
}

/// Encodes `matrix ∘ mask` in relative-index form. Survivors whose value is exactly
/// zero carry no information and are dropped.
pub fn encode_relative(matrix: &Matrix, mask: &Matrix, bits_per_index: u8) -> Result<SparseLayer> {
    check_bits(bits_per_index)?;
    matrix.check_same_shape(mask)?;
    let span = 1i64 << bits_per_index;
    let filler_diff = (span - 1) as u16;
    let mut entries = Vec::new();
    let mut pos: i64 = -1;
    for (q, (&w, &m)) in matrix.as_slice().iter().zip(mask.as_slice()).enumerate() {
        if m == 0.0 || w == 0.0 {
            continue;
        }
        let q = q as i64;
        let mut gap = q - pos;
        while gap > span {
            entries.push(RelEntry {
                diff: filler_diff,
                value: 0.0,
            });
            pos += span;
            gap = q - pos;
        }
        entries.push(RelEntry {
            diff: (gap - 1) as u16,
            value: w,
        });
        pos = q;
    }
    SparseLayer::new(
        matrix.rows(),
        matrix.cols(),
        RelativeIndexStream::new(bits_per_index, entries, matrix.len())?,
    )
}

pub fn decode_relative(layer: &SparseLayer) -> Result<Matrix> {
    let mut out = Matrix::zeros(layer.rows, layer.cols);
    let data = out.as_mut_slice();
    layer.stream.walk(|pos, e| {
        if !e.is_filler() {
            data[pos] = e.value;
        }
    })?;
    Ok(out)
}

/// Numbers needed to hold a CSR/CSC layout: values, column indices and row pointers.
pub fn csr_storage_count(nnz: usize, n_rows: usize) -> usize {
    2 * nnz + n_rows + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f32]) -> Matrix {
        Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    fn mask_of(m: &Matrix) -> Matrix {
        let data = m.as_slice().iter().map(|v| if *v != 0.0 { 1.0 } else { 0.0 }).collect();
        Matrix::from_vec(m.rows(), m.cols(), data).unwrap()
    }

    #[test]
    fn filler_bridges_long_gap() {
        let (a, b) = (0.75f32, -1.25f32);
        let mut v = vec![0.0; 16];
        v[1] = a;
        v[15] = b;
        let m = row(&v);
        let layer = encode_relative(&m, &mask_of(&m), 3).unwrap();
        let entries: Vec<(u16, f32)> = layer.stream().entries().iter().map(|e| (e.diff, e.value)).collect();
        assert_eq!(entries, vec![(1, a), (7, 0.0), (5, b)]);
        let mut positions = Vec::new();
        layer.stream().walk(|p, _| positions.push(p)).unwrap();
        assert_eq!(positions, vec![1, 9, 15]);
        assert_eq!(layer.nnz(), 2);
        assert_eq!(decode_relative(&layer).unwrap(), m);
    }

    #[test]
    fn gap_of_exactly_two_to_the_bits_needs_no_filler() {
        let mut v = vec![0.0; 9];
        v[0] = 1.0;
        v[8] = 2.0;
        let m = row(&v);
        let layer = encode_relative(&m, &mask_of(&m), 3).unwrap();
        let diffs: Vec<u16> = layer.stream().entries().iter().map(|e| e.diff).collect();
        assert_eq!(diffs, vec![0, 7]);
    }

    #[test]
    fn fully_pruned_layer_is_empty() {
        let m = Matrix::filled(3, 4, 0.5);
        let layer = encode_relative(&m, &Matrix::zeros(3, 4), 5).unwrap();
        assert_eq!(layer.entry_count(), 0);
        assert_eq!(layer.stream().logical_length(), 12);
        assert_eq!(decode_relative(&layer).unwrap(), Matrix::zeros(3, 4));
    }

    #[test]
    fn dense_row_uses_unit_gaps() {
        let m = row(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let layer = encode_relative(&m, &Matrix::filled(1, 9, 1.0), 3).unwrap();
        assert_eq!(layer.entry_count(), 9);
        assert!(layer.stream().entries().iter().all(|e| e.diff == 0));
    }

    #[test]
    fn single_entry_decodes_at_origin() {
        let stream = RelativeIndexStream::new(4, vec![RelEntry { diff: 0, value: 3.5 }], 6).unwrap();
        let layer = SparseLayer::new(2, 3, stream).unwrap();
        assert_eq!(decode_relative(&layer).unwrap().as_slice(), &[3.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn walking_past_the_end_is_corruption() {
        let stream = RelativeIndexStream::new(
            4,
            vec![RelEntry { diff: 3, value: 1.0 }, RelEntry { diff: 5, value: 2.0 }],
            8,
        )
        .unwrap();
        let layer = SparseLayer::new(2, 4, stream).unwrap();
        assert!(matches!(decode_relative(&layer), Err(Error::Corruption(_))));
    }

    #[test]
    fn bits_out_of_range() {
        let m = row(&[1.0]);
        assert!(matches!(encode_relative(&m, &m, 0), Err(Error::Argument(_))));
        assert!(matches!(encode_relative(&m, &m, 17), Err(Error::Argument(_))));
        assert!(RelativeIndexStream::new(3, vec![RelEntry { diff: 8, value: 1.0 }], 20).is_err());
    }

    #[test]
    fn csr_counts() {
        assert_eq!(csr_storage_count(10, 4), 25);
        assert_eq!(csr_storage_count(0, 1), 2);
        // ip1 of LeNet-300-100 at 8% of 235K weights
        assert_eq!(csr_storage_count(18_800, 300), 37_901);
    }
}
