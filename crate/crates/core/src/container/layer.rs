use crate::error::{Error, Result};
use crate::huffman::{self, pack_fixed, unpack_fixed, BitStream, CanonicalCode};
use crate::model::Matrix;
use crate::prune::{RelEntry, RelativeIndexStream, SparseLayer, MAX_INDEX_BITS};
use crate::quant::{Codebook, IndexAssignment, QuantizedWeights};

/// Compression stage of a layer record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Dense,
    Pruned,
    Quantized,
    Huffman,
}

impl Stage {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Stage::Dense),
            1 => Ok(Stage::Pruned),
            2 => Ok(Stage::Quantized),
            3 => Ok(Stage::Huffman),
            c => Err(Error::Format(format!("unknown stage code {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Dense => "dense",
            Stage::Pruned => "pruned",
            Stage::Quantized => "quantized",
            Stage::Huffman => "huffman",
        }
    }
}

/// Sparsity structure of a layer without its values: relative diffs plus a per-entry
/// filler flag. Zero bits means every position is present and no diffs are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseIndex {
    bits: u8,
    diffs: Vec<u16>,
    fillers: Vec<bool>,
    logical_length: usize,
}

impl SparseIndex {
    pub fn new(bits: u8, diffs: Vec<u16>, fillers: Vec<bool>, logical_length: usize) -> Result<Self> {
        if bits > MAX_INDEX_BITS {
            return Err(Error::Argument(format!("index bits {bits} outside 0..={MAX_INDEX_BITS}")));
        }
        if bits == 0 && (diffs.len() != logical_length || fillers.iter().any(|f| *f)) {
            return Err(Error::Corruption(format!(
                "position-free index must cover all {logical_length} positions"
            )));
        }
        if diffs.len() != fillers.len() {
            return Err(Error::Shape(format!(
                "{} diffs but {} filler flags",
                diffs.len(),
                fillers.len()
            )));
        }
        let max = ((1u32 << bits) - 1) as u16;
        let mut pos: i64 = -1;
        for (i, (&d, &f)) in diffs.iter().zip(&fillers).enumerate() {
            if d > max {
                return Err(Error::Corruption(format!("diff {d} at entry {i} exceeds {bits}-bit range")));
            }
            if f && d != max {
                return Err(Error::Corruption(format!("filler at entry {i} has diff {d}, expected {max}")));
            }
            pos += d as i64 + 1;
            if pos as usize >= logical_length {
                return Err(Error::Corruption(format!(
                    "entry {i} lands at position {pos} beyond length {logical_length}"
                )));
            }
        }
        Ok(Self {
            bits,
            diffs,
            fillers,
            logical_length,
        })
    }

    /// Every position present, in order.
    pub fn dense(logical_length: usize) -> Self {
        Self {
            bits: 0,
            diffs: vec![0; logical_length],
            fillers: vec![false; logical_length],
            logical_length,
        }
    }

    pub fn from_stream(stream: &RelativeIndexStream) -> Self {
        Self {
            bits: stream.bits_per_index(),
            diffs: stream.entries().iter().map(|e| e.diff).collect(),
            fillers: stream.entries().iter().map(RelEntry::is_filler).collect(),
            logical_length: stream.logical_length(),
        }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn diffs(&self) -> &[u16] {
        &self.diffs
    }

    pub fn fillers(&self) -> &[bool] {
        &self.fillers
    }

    pub fn logical_length(&self) -> usize {
        self.logical_length
    }

    pub fn entry_count(&self) -> usize {
        self.diffs.len()
    }

    pub fn nnz(&self) -> usize {
        self.fillers.iter().filter(|f| !**f).count()
    }

    pub fn max_diff(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    /// Entries whose stored diff is the maximum; each carries a filler flag on disk.
    pub fn flagged_count(&self) -> usize {
        flagged(self.bits, &self.diffs)
    }

    /// Absolute positions of the genuine entries.
    pub fn positions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.diffs.len());
        let mut pos: i64 = -1;
        for (&d, &f) in self.diffs.iter().zip(&self.fillers) {
            pos += d as i64 + 1;
            if !f {
                out.push(pos as usize);
            }
        }
        out
    }

    /// Rebuilds a value-carrying stream; genuine values must be nonzero.
    pub fn with_values(&self, values: &[f32]) -> Result<RelativeIndexStream> {
        if values.len() != self.nnz() {
            return Err(Error::Shape(format!("{} values for {} entries", values.len(), self.nnz())));
        }
        let mut next = values.iter();
        let mut entries = Vec::with_capacity(self.diffs.len());
        for (i, (&d, &f)) in self.diffs.iter().zip(&self.fillers).enumerate() {
            let value = if f { 0.0 } else { *next.next().expect("count checked") };
            if !f && value == 0.0 {
                return Err(Error::Corruption(format!("genuine entry {i} holds 0.0")));
            }
            entries.push(RelEntry { diff: d, value });
        }
        RelativeIndexStream::new(self.bits, entries, self.logical_length)
    }

    pub(crate) fn packed_diffs(&self) -> BitStream {
        pack_fixed(self.diffs.iter().map(|&d| d as u64), self.bits)
    }

    pub(crate) fn packed_flags(&self) -> BitStream {
        if self.bits == 0 {
            return BitStream::default();
        }
        let max = self.max_diff();
        pack_fixed(
            self.diffs
                .iter()
                .zip(&self.fillers)
                .filter(|(d, _)| **d == max)
                .map(|(_, f)| *f as u64),
            1,
        )
    }

    pub(crate) fn from_packed(
        bits: u8,
        diffs: Vec<u16>,
        flags: &BitStream,
        logical_length: usize,
    ) -> Result<Self> {
        let max = ((1u32 << bits) - 1) as u16;
        let flag_bits = unpack_fixed(flags, 1, flagged(bits, &diffs))?;
        let mut next = flag_bits.into_iter();
        let fillers = diffs
            .iter()
            .map(|&d| bits > 0 && d == max && next.next() == Some(1))
            .collect();
        Self::new(bits, diffs, fillers, logical_length)
    }
}

/// Number of entries that need a filler flag.
pub(crate) fn flagged(bits: u8, diffs: &[u16]) -> usize {
    if bits == 0 {
        return 0;
    }
    let max = ((1u32 << bits) - 1) as u16;
    diffs.iter().filter(|d| **d == max).count()
}

/// Pruned and weight-shared layer: positions from a sparse index, values by codebook lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    rows: usize,
    cols: usize,
    index: SparseIndex,
    codebook: Codebook,
    indices: Vec<u16>,
}

impl QuantizedLayer {
    pub fn new(rows: usize, cols: usize, index: SparseIndex, codebook: Codebook, indices: Vec<u16>) -> Result<Self> {
        if rows * cols != index.logical_length() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} layer with sparse length {}",
                index.logical_length()
            )));
        }
        if indices.len() != index.nnz() {
            return Err(Error::Consistency(format!(
                "{} codebook indices for {} survivors",
                indices.len(),
                index.nnz()
            )));
        }
        if let Some((i, c)) = indices.iter().enumerate().find(|(_, c)| **c as usize >= codebook.len()) {
            return Err(Error::Corruption(format!(
                "codebook index {c} at entry {i} >= k = {}",
                codebook.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            index,
            codebook,
            indices,
        })
    }

    /// Weight sharing without pruning: every position holds a codebook index.
    pub fn unpruned(rows: usize, cols: usize, codebook: Codebook, indices: Vec<u16>) -> Result<Self> {
        Self::new(rows, cols, SparseIndex::dense(rows * cols), codebook, indices)
    }

    /// Combines a pruned layer with the clustering of its survivors.
    pub fn from_parts(layer: &SparseLayer, weights: &QuantizedWeights) -> Result<Self> {
        Self::new(
            layer.rows(),
            layer.cols(),
            SparseIndex::from_stream(layer.stream()),
            weights.codebook.clone(),
            weights.assignment.indices().to_vec(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn index(&self) -> &SparseIndex {
        &self.index
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn assignment(&self) -> Result<IndexAssignment> {
        IndexAssignment::new(self.indices.clone(), self.codebook.len())
    }

    /// Same structure and assignment with a different codebook of equal size.
    pub fn with_codebook(&self, codebook: Codebook) -> Result<Self> {
        if codebook.len() != self.codebook.len() {
            return Err(Error::Shape(format!(
                "replacement codebook has {} centroids, expected {}",
                codebook.len(),
                self.codebook.len()
            )));
        }
        Self::new(self.rows, self.cols, self.index.clone(), codebook, self.indices.clone())
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        let data = out.as_mut_slice();
        for (pos, &i) in self.index.positions().iter().zip(&self.indices) {
            data[*pos] = self.codebook.centroids()[i as usize];
        }
        out
    }
}

/// Huffman-coded form of a quantized layer, with separate codes for the diff stream and
/// the codebook-index stream.
#[derive(Debug, Clone, PartialEq)]
pub struct HuffmanLayer {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) bits: u8,
    pub(crate) codebook: Codebook,
    pub(crate) diff_code: CanonicalCode,
    pub(crate) diff_count: usize,
    pub(crate) diff_stream: BitStream,
    pub(crate) index_code: CanonicalCode,
    pub(crate) index_count: usize,
    pub(crate) index_stream: BitStream,
    pub(crate) flags: BitStream,
}

fn code_for(symbols: &[u16]) -> Result<CanonicalCode> {
    if symbols.is_empty() {
        return CanonicalCode::from_lengths(Vec::new());
    }
    huffman::build_code(&huffman::build_histogram(symbols)?)
}

impl HuffmanLayer {
    pub fn encode(layer: &QuantizedLayer) -> Result<Self> {
        let diffs: &[u16] = if layer.index.bits() == 0 {
            &[]
        } else {
            layer.index.diffs()
        };
        let diff_code = code_for(diffs)?;
        let index_code = code_for(&layer.indices)?;
        Ok(Self {
            rows: layer.rows,
            cols: layer.cols,
            bits: layer.index.bits(),
            codebook: layer.codebook.clone(),
            diff_stream: huffman::encode(diffs, &diff_code)?,
            diff_code,
            diff_count: diffs.len(),
            index_stream: huffman::encode(&layer.indices, &index_code)?,
            index_code,
            index_count: layer.indices.len(),
            flags: layer.index.packed_flags(),
        })
    }

    pub fn decode(&self) -> Result<QuantizedLayer> {
        let diffs = huffman::decode(&self.diff_stream, &self.diff_code, self.diff_count)
            .map_err(|e| e.context("diff stream"))?;
        let len = self.rows * self.cols;
        let index = if self.bits == 0 {
            if !diffs.is_empty() || self.flags.bit_count() != 0 {
                return Err(Error::Corruption("position-free layer carries a diff stream".into()));
            }
            SparseIndex::dense(len)
        } else {
            SparseIndex::from_packed(self.bits, diffs, &self.flags, len).map_err(|e| e.context("filler flags"))?
        };
        let indices = huffman::decode(&self.index_stream, &self.index_code, self.index_count)
            .map_err(|e| e.context("index stream"))?;
        QuantizedLayer::new(self.rows, self.cols, index, self.codebook.clone(), indices)
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn diff_code(&self) -> &CanonicalCode {
        &self.diff_code
    }

    pub fn index_code(&self) -> &CanonicalCode {
        &self.index_code
    }

    pub fn diff_stream(&self) -> &BitStream {
        &self.diff_stream
    }

    pub fn index_stream(&self) -> &BitStream {
        &self.index_stream
    }

    pub fn entry_count(&self) -> usize {
        if self.bits == 0 {
            self.rows * self.cols
        } else {
            self.diff_count
        }
    }

    pub fn nnz(&self) -> usize {
        self.index_count
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerPayload {
    Dense(Matrix),
    Pruned(SparseLayer),
    Quantized(QuantizedLayer),
    Huffman(HuffmanLayer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub name: String,
    pub payload: LayerPayload,
}

impl LayerRecord {
    pub fn new(name: impl Into<String>, payload: LayerPayload) -> Result<Self> {
        let name = name.into();
        if name.len() > u8::MAX as usize {
            return Err(Error::Argument(format!("layer name longer than 255 bytes: {name}")));
        }
        Ok(Self { name, payload })
    }

    pub fn stage(&self) -> Stage {
        match self.payload {
            LayerPayload::Dense(_) => Stage::Dense,
            LayerPayload::Pruned(_) => Stage::Pruned,
            LayerPayload::Quantized(_) => Stage::Quantized,
            LayerPayload::Huffman(_) => Stage::Huffman,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match &self.payload {
            LayerPayload::Dense(m) => m.shape(),
            LayerPayload::Pruned(s) => s.shape(),
            LayerPayload::Quantized(q) => (q.rows, q.cols),
            LayerPayload::Huffman(h) => (h.rows, h.cols),
        }
    }

    pub fn nnz(&self) -> usize {
        match &self.payload {
            LayerPayload::Dense(m) => m.len(),
            LayerPayload::Pruned(s) => s.nnz(),
            LayerPayload::Quantized(q) => q.nnz(),
            LayerPayload::Huffman(h) => h.index_count,
        }
    }

    /// Bits per relative diff; zero for dense layers.
    pub fn index_bits(&self) -> u8 {
        match &self.payload {
            LayerPayload::Dense(_) => 0,
            LayerPayload::Pruned(s) => s.stream().bits_per_index(),
            LayerPayload::Quantized(q) => q.index.bits(),
            LayerPayload::Huffman(h) => h.bits,
        }
    }

    /// Bits per stored weight: 32 for raw floats, codebook index width otherwise.
    pub fn weight_bits(&self) -> u8 {
        match &self.payload {
            LayerPayload::Dense(_) | LayerPayload::Pruned(_) => 32,
            LayerPayload::Quantized(q) => q.codebook.index_bits(),
            LayerPayload::Huffman(h) => h.codebook.index_bits(),
        }
    }

    /// Huffman layers decoded back to their quantized form; other stages unchanged.
    pub fn unentropy(&self) -> Result<LayerRecord> {
        match &self.payload {
            LayerPayload::Huffman(h) => Ok(LayerRecord {
                name: self.name.clone(),
                payload: LayerPayload::Quantized(h.decode().map_err(|e| e.context(format!("layer {}", self.name)))?),
            }),
            _ => Ok(self.clone()),
        }
    }

    /// Quantized layers Huffman-coded; other stages unchanged.
    pub fn entropy_coded(&self) -> Result<LayerRecord> {
        match &self.payload {
            LayerPayload::Quantized(q) => Ok(LayerRecord {
                name: self.name.clone(),
                payload: LayerPayload::Huffman(HuffmanLayer::encode(q)?),
            }),
            _ => Ok(self.clone()),
        }
    }
}

/// Dense weights represented by a record, whatever its stage.
pub fn reconstruct_dense(record: &LayerRecord) -> Result<Matrix> {
    let ctx = |e: Error| e.context(format!("layer {}", record.name));
    match &record.payload {
        LayerPayload::Dense(m) => Ok(m.clone()),
        LayerPayload::Pruned(s) => crate::prune::decode_relative(s).map_err(ctx),
        LayerPayload::Quantized(q) => Ok(q.to_dense()),
        LayerPayload::Huffman(h) => Ok(h.decode().map_err(ctx)?.to_dense()),
    }
}

/// Pruned layer from positions and values.
pub fn sparse_layer(rows: usize, cols: usize, index: &SparseIndex, values: &[f32]) -> Result<SparseLayer> {
    SparseLayer::new(rows, cols, index.with_values(values)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prune::encode_relative;

    fn toy_sparse() -> SparseLayer {
        let mut m = Matrix::zeros(2, 10);
        m.set(0, 1, 0.5);
        m.set(1, 5, -0.25);
        m.set(1, 6, 0.75);
        let mask = Matrix::filled(2, 10, 1.0);
        encode_relative(&m, &mask, 3).unwrap()
    }

    #[test]
    fn sparse_index_keeps_structure() {
        let s = toy_sparse();
        let idx = SparseIndex::from_stream(s.stream());
        assert_eq!(idx.positions(), vec![1, 15, 16]);
        assert_eq!(idx.diffs(), &[1, 7, 5, 0]);
        assert_eq!(idx.fillers(), &[false, true, false, false]);
        assert_eq!(idx.flagged_count(), 1);
        let back = SparseLayer::new(2, 10, idx.with_values(&s.values()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn flags_disambiguate_max_gaps() {
        // genuine gap of exactly 8 at 3 bits, next to a filler
        let idx = SparseIndex::new(3, vec![7, 7, 0], vec![false, true, false], 20).unwrap();
        let flags = idx.packed_flags();
        assert_eq!(flags.bit_count(), 2);
        let again = SparseIndex::from_packed(3, idx.diffs().to_vec(), &flags, 20).unwrap();
        assert_eq!(again, idx);
        assert_eq!(idx.positions(), vec![7, 16]);
    }

    #[test]
    fn sparse_index_validation() {
        assert!(SparseIndex::new(3, vec![8], vec![false], 20).is_err());
        assert!(SparseIndex::new(3, vec![6], vec![true], 20).is_err());
        assert!(SparseIndex::new(3, vec![7, 7, 7], vec![false; 3], 20).is_err());
        assert!(SparseIndex::new(3, vec![7, 7], vec![false; 2], 16).is_ok());
    }

    #[test]
    fn quantized_layer_lookup() {
        let s = toy_sparse();
        let idx = SparseIndex::from_stream(s.stream());
        let book = Codebook::new(vec![-0.25, 0.6]).unwrap();
        let q = QuantizedLayer::new(2, 10, idx.clone(), book.clone(), vec![1, 0, 1]).unwrap();
        let d = q.to_dense();
        assert_eq!(d.get(0, 1), 0.6);
        assert_eq!(d.get(1, 5), -0.25);
        assert_eq!(d.get(1, 6), 0.6);
        assert_eq!(d.count_nonzero(), 3);
        assert!(matches!(
            QuantizedLayer::new(2, 10, idx.clone(), book.clone(), vec![1, 2, 0]),
            Err(Error::Corruption(_))
        ));
        assert!(QuantizedLayer::new(2, 10, idx, book, vec![1, 0]).is_err());
    }

    #[test]
    fn huffman_layer_round_trip() {
        let s = toy_sparse();
        let q = QuantizedLayer::new(
            2,
            10,
            SparseIndex::from_stream(s.stream()),
            Codebook::new(vec![-0.25, 0.6]).unwrap(),
            vec![1, 0, 1],
        )
        .unwrap();
        let h = HuffmanLayer::encode(&q).unwrap();
        assert_eq!(h.decode().unwrap(), q);
    }

    #[test]
    fn empty_quantized_layer_round_trip() {
        let idx = SparseIndex::new(5, vec![], vec![], 12).unwrap();
        let q = QuantizedLayer::new(3, 4, idx, Codebook::new(vec![0.1]).unwrap(), vec![]).unwrap();
        let h = HuffmanLayer::encode(&q).unwrap();
        assert_eq!(h.decode().unwrap(), q);
        assert_eq!(q.to_dense(), Matrix::zeros(3, 4));
    }

    #[test]
    fn position_free_layers() {
        let book = Codebook::new(vec![-1.0, 0.5]).unwrap();
        let q = QuantizedLayer::unpruned(2, 2, book, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(q.to_dense().as_slice(), &[-1.0, 0.5, 0.5, -1.0]);
        assert_eq!(q.index().flagged_count(), 0);
        let h = HuffmanLayer::encode(&q).unwrap();
        assert_eq!(h.diff_stream().bit_count(), 0);
        assert_eq!(h.entry_count(), 4);
        assert_eq!(h.decode().unwrap(), q);
        assert!(SparseIndex::new(0, vec![0, 0], vec![false; 2], 3).is_err());
    }

    #[test]
    fn stage_codes() {
        for s in [Stage::Dense, Stage::Pruned, Stage::Quantized, Stage::Huffman] {
            assert_eq!(Stage::from_code(s.code()).unwrap(), s);
        }
        assert!(Stage::from_code(4).is_err());
    }
}
