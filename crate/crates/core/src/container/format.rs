use crate::error::{Error, Result};
use crate::huffman::{unpack_fixed, BitStream, CanonicalCode};
use crate::model::Matrix;
use crate::prune::{SparseLayer, MAX_INDEX_BITS};
use crate::quant::Codebook;
use crate::wire::{ByteReader, ByteWriter};

use super::layer::{HuffmanLayer, LayerPayload, LayerRecord, QuantizedLayer, SparseIndex, Stage};
use super::CompressedModel;

pub const MAGIC: &[u8; 4] = b"WPCM";
pub const VERSION: u16 = 1;
/// Magic, version and layer count.
pub const HEADER_BYTES: usize = 8;
/// Length prefix plus CRC32 around every payload.
pub const FRAME_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Weights,
    Sparse,
    Values,
    Codebook,
    Indices,
    DiffTable,
    DiffStream,
    IndexTable,
    IndexStream,
    Flags,
    Biases,
}

/// What a payload contributes to, in the weight / index / codebook breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Weight,
    Index,
    Codebook,
    Table,
    Bias,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Weights => "weights",
            PayloadKind::Sparse => "sparse index",
            PayloadKind::Values => "values",
            PayloadKind::Codebook => "codebook",
            PayloadKind::Indices => "codebook indices",
            PayloadKind::DiffTable => "diff code table",
            PayloadKind::DiffStream => "diff bitstream",
            PayloadKind::IndexTable => "index code table",
            PayloadKind::IndexStream => "index bitstream",
            PayloadKind::Flags => "filler flags",
            PayloadKind::Biases => "biases",
        }
    }

    pub fn category(self) -> Category {
        match self {
            PayloadKind::Weights | PayloadKind::Values | PayloadKind::Indices | PayloadKind::IndexStream => {
                Category::Weight
            }
            PayloadKind::Sparse | PayloadKind::DiffStream | PayloadKind::Flags => Category::Index,
            PayloadKind::Codebook => Category::Codebook,
            PayloadKind::DiffTable | PayloadKind::IndexTable => Category::Table,
            PayloadKind::Biases => Category::Bias,
        }
    }

    fn for_stage(stage: Stage) -> &'static [PayloadKind] {
        match stage {
            Stage::Dense => &[PayloadKind::Weights],
            Stage::Pruned => &[PayloadKind::Sparse, PayloadKind::Values],
            Stage::Quantized => &[PayloadKind::Sparse, PayloadKind::Codebook, PayloadKind::Indices],
            Stage::Huffman => &[
                PayloadKind::Codebook,
                PayloadKind::DiffTable,
                PayloadKind::DiffStream,
                PayloadKind::IndexTable,
                PayloadKind::IndexStream,
                PayloadKind::Flags,
            ],
        }
    }
}

/// A layer record split into its fixed header and payload bodies.
#[derive(Debug, Clone)]
pub struct EncodedRecord {
    pub header: Vec<u8>,
    pub payloads: Vec<(PayloadKind, Vec<u8>)>,
}

impl EncodedRecord {
    /// Bytes the record occupies in a container.
    pub fn size(&self) -> usize {
        self.header.len() + self.payloads.iter().map(|(_, p)| FRAME_BYTES + p.len()).sum::<usize>()
    }

    pub fn payload_bytes(&self, category: Category) -> usize {
        self.payloads
            .iter()
            .filter(|(k, _)| k.category() == category)
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Header and framing bytes.
    pub fn overhead_bytes(&self) -> usize {
        self.header.len() + FRAME_BYTES * self.payloads.len()
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Argument(format!("{what} {n} does not fit in u32")))
}

fn write_codebook(w: &mut ByteWriter, book: &Codebook) {
    // 65536 centroids are stored as 0
    w.u16(book.len() as u16);
    w.f32s(book.centroids());
}

fn write_table(w: &mut ByteWriter, code: &CanonicalCode) -> Result<()> {
    let lengths = code.lengths();
    if lengths.len() > u16::MAX as usize {
        return Err(Error::Coding(format!("{} code table slots exceed u16", lengths.len())));
    }
    w.u16(lengths.len() as u16);
    w.bytes(lengths);
    Ok(())
}

fn write_stream(w: &mut ByteWriter, count: usize, stream: &BitStream) -> Result<()> {
    w.u32(u32_of(count, "symbol count")?);
    w.u32(u32_of(stream.bit_count() as usize, "bit count")?);
    w.bytes(stream.bytes());
    Ok(())
}

fn sparse_payload(index: &SparseIndex) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.u32(u32_of(index.entry_count(), "entry count")?);
    w.bytes(index.packed_diffs().bytes());
    w.bytes(index.packed_flags().bytes());
    Ok(w.into_inner())
}

fn finish(w: ByteWriter) -> Vec<u8> {
    w.into_inner()
}

pub fn encode_record(record: &LayerRecord) -> Result<EncodedRecord> {
    let (rows, cols) = record.shape();
    let mut h = ByteWriter::new();
    h.u8(record.name.len() as u8);
    h.bytes(record.name.as_bytes());
    h.u32(u32_of(rows, "rows")?);
    h.u32(u32_of(cols, "cols")?);
    h.u8(record.stage().code());
    h.u32(u32_of(record.nnz(), "nnz")?);
    h.u8(record.index_bits());
    h.u8(record.weight_bits());
    let crc = crc32fast::hash(h.as_slice());
    h.u32(crc);

    let mut payloads = Vec::new();
    match &record.payload {
        LayerPayload::Dense(m) => {
            let mut w = ByteWriter::new();
            w.f32s(m.as_slice());
            payloads.push((PayloadKind::Weights, finish(w)));
        }
        LayerPayload::Pruned(s) => {
            payloads.push((PayloadKind::Sparse, sparse_payload(&SparseIndex::from_stream(s.stream()))?));
            let mut w = ByteWriter::new();
            w.f32s(&s.values());
            payloads.push((PayloadKind::Values, finish(w)));
        }
        LayerPayload::Quantized(q) => {
            payloads.push((PayloadKind::Sparse, sparse_payload(q.index())?));
            let mut w = ByteWriter::new();
            write_codebook(&mut w, q.codebook());
            payloads.push((PayloadKind::Codebook, finish(w)));
            let packed = crate::huffman::pack_fixed(
                q.indices().iter().map(|&i| i as u64),
                q.codebook().index_bits(),
            );
            payloads.push((PayloadKind::Indices, packed.bytes().to_vec()));
        }
        LayerPayload::Huffman(hl) => {
            let mut w = ByteWriter::new();
            write_codebook(&mut w, &hl.codebook);
            payloads.push((PayloadKind::Codebook, finish(w)));
            let mut w = ByteWriter::new();
            write_table(&mut w, &hl.diff_code)?;
            payloads.push((PayloadKind::DiffTable, finish(w)));
            let mut w = ByteWriter::new();
            write_stream(&mut w, hl.diff_count, &hl.diff_stream)?;
            payloads.push((PayloadKind::DiffStream, finish(w)));
            let mut w = ByteWriter::new();
            write_table(&mut w, &hl.index_code)?;
            payloads.push((PayloadKind::IndexTable, finish(w)));
            let mut w = ByteWriter::new();
            write_stream(&mut w, hl.index_count, &hl.index_stream)?;
            payloads.push((PayloadKind::IndexStream, finish(w)));
            let mut w = ByteWriter::new();
            w.u32(u32_of(hl.flags.bit_count() as usize, "flag count")?);
            w.bytes(hl.flags.bytes());
            payloads.push((PayloadKind::Flags, finish(w)));
        }
    }
    Ok(EncodedRecord {
        header: h.into_inner(),
        payloads,
    })
}

pub fn bias_payload(biases: &[Vec<f32>]) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    for b in biases {
        w.u32(u32_of(b.len(), "bias length")?);
        w.f32s(b);
    }
    Ok(w.into_inner())
}

fn write_frame(w: &mut ByteWriter, payload: &[u8]) -> Result<()> {
    w.u32(u32_of(payload.len(), "payload length")?);
    w.bytes(payload);
    w.u32(crc32fast::hash(payload));
    Ok(())
}

pub fn serialize(model: &CompressedModel) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u16(
        u16::try_from(model.layers().len())
            .map_err(|_| Error::Argument(format!("{} layers exceed u16", model.layers().len())))?,
    );
    for record in model.layers() {
        let enc = encode_record(record)?;
        w.bytes(&enc.header);
        for (_, p) in &enc.payloads {
            write_frame(&mut w, p)?;
        }
    }
    write_frame(&mut w, &bias_payload(model.biases())?)?;
    Ok(w.into_inner())
}

fn read_frame<'a>(r: &mut ByteReader<'a>, what: &str) -> Result<&'a [u8]> {
    let len = r.u32(what)? as usize;
    let body = r.take(len, what)?;
    let crc = r.u32(what)?;
    if crc32fast::hash(body) != crc {
        return Err(Error::Corruption(format!("{what}: checksum mismatch")));
    }
    Ok(body)
}

fn expect_end(r: &ByteReader<'_>, what: &str) -> Result<()> {
    if r.remaining() != 0 {
        return Err(Error::Corruption(format!("{} unexpected bytes at end of {what}", r.remaining())));
    }
    Ok(())
}

fn stream_from(r: &mut ByteReader<'_>, bits: u64, what: &str) -> Result<BitStream> {
    let bytes = r.take(bits.div_ceil(8) as usize, what)?;
    BitStream::from_parts(bytes.to_vec(), bits)
}

fn read_sparse(body: &[u8], bits: u8, logical_length: usize) -> Result<SparseIndex> {
    let mut r = ByteReader::new(body);
    let entries = r.u32("entry count")? as usize;
    let diff_bits = entries as u64 * bits as u64;
    let diffs: Vec<u16> = unpack_fixed(&stream_from(&mut r, diff_bits, "diffs")?, bits, entries)?
        .into_iter()
        .map(|d| d as u16)
        .collect();
    let flags = stream_from(&mut r, super::layer::flagged(bits, &diffs) as u64, "filler flags")?;
    expect_end(&r, "sparse index")?;
    SparseIndex::from_packed(bits, diffs, &flags, logical_length)
}

fn read_codebook(body: &[u8]) -> Result<Codebook> {
    let mut r = ByteReader::new(body);
    let k = match r.u16("codebook size")? {
        0 => 1 << 16,
        k => k as usize,
    };
    let centroids = r.f32s(k, "centroids")?;
    expect_end(&r, "codebook")?;
    Codebook::new(centroids).map_err(|e| Error::Corruption(e.to_string()))
}

fn read_table(body: &[u8]) -> Result<CanonicalCode> {
    let mut r = ByteReader::new(body);
    let slots = r.u16("table size")? as usize;
    let lengths = r.take(slots, "code lengths")?.to_vec();
    expect_end(&r, "code table")?;
    CanonicalCode::from_lengths(lengths).map_err(|e| Error::Corruption(e.to_string()))
}

fn read_stream(body: &[u8]) -> Result<(usize, BitStream)> {
    let mut r = ByteReader::new(body);
    let count = r.u32("symbol count")? as usize;
    let bits = r.u32("bit count")? as u64;
    let s = stream_from(&mut r, bits, "bitstream")?;
    expect_end(&r, "bitstream")?;
    Ok((count, s))
}

fn read_record(r: &mut ByteReader<'_>, ordinal: usize) -> Result<LayerRecord> {
    let start = r.remaining();
    let header_view = *r;
    let name_len = r.u8("layer name length")? as usize;
    let name = String::from_utf8(r.take(name_len, "layer name")?.to_vec())
        .map_err(|_| Error::Corruption(format!("layer {ordinal}: name is not UTF-8")))?;
    let at = |e: Error| e.context(format!("layer {ordinal} ({name})"));
    let rows = r.u32("rows").map_err(at)? as usize;
    let cols = r.u32("cols").map_err(at)? as usize;
    let stage = Stage::from_code(r.u8("stage").map_err(at)?).map_err(at)?;
    let nnz = r.u32("nnz").map_err(at)? as usize;
    let index_bits = r.u8("index bits").map_err(at)?;
    let weight_bits = r.u8("weight bits").map_err(at)?;
    let header_len = start - r.remaining();
    let mut hv = header_view;
    let header_bytes = hv.take(header_len, "layer header")?;
    if crc32fast::hash(header_bytes) != r.u32("header checksum").map_err(at)? {
        return Err(at(Error::Corruption("layer header checksum mismatch".into())));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| at(Error::Corruption(format!("shape {rows}x{cols} overflows"))))?;
    let bits_ok = match stage {
        Stage::Dense => index_bits == 0,
        Stage::Pruned => (1..=MAX_INDEX_BITS).contains(&index_bits),
        Stage::Quantized | Stage::Huffman => index_bits <= MAX_INDEX_BITS,
    };
    if !bits_ok {
        return Err(at(Error::Corruption(format!("index bits {index_bits} out of range"))));
    }

    let kinds = PayloadKind::for_stage(stage);
    let mut bodies = Vec::with_capacity(kinds.len());
    for kind in kinds {
        bodies.push(read_frame(r, kind.name()).map_err(at)?);
    }
    let parse = |i: usize, e: Error| at(e.context(format!("{} payload", kinds[i].name())));

    let payload = match stage {
        Stage::Dense => {
            let mut br = ByteReader::new(bodies[0]);
            let data = br.f32s(len, "weights").map_err(|e| parse(0, e))?;
            expect_end(&br, "weights").map_err(|e| parse(0, e))?;
            LayerPayload::Dense(Matrix::from_vec(rows, cols, data).map_err(|e| parse(0, e))?)
        }
        Stage::Pruned => {
            let index = read_sparse(bodies[0], index_bits, len).map_err(|e| parse(0, e))?;
            let mut br = ByteReader::new(bodies[1]);
            let values = br.f32s(index.nnz(), "values").map_err(|e| parse(1, e))?;
            expect_end(&br, "values").map_err(|e| parse(1, e))?;
            let stream = index.with_values(&values).map_err(|e| parse(1, e))?;
            LayerPayload::Pruned(SparseLayer::new(rows, cols, stream).map_err(at)?)
        }
        Stage::Quantized => {
            let index = read_sparse(bodies[0], index_bits, len).map_err(|e| parse(0, e))?;
            let codebook = read_codebook(bodies[1]).map_err(|e| parse(1, e))?;
            let width = codebook.index_bits();
            let count = index.nnz();
            let stream = BitStream::from_parts(bodies[2].to_vec(), count as u64 * width as u64)
                .map_err(|e| parse(2, e))?;
            let indices = unpack_fixed(&stream, width, count)
                .map_err(|e| parse(2, e))?
                .into_iter()
                .map(|i| i as u16)
                .collect();
            LayerPayload::Quantized(
                QuantizedLayer::new(rows, cols, index, codebook, indices).map_err(|e| parse(2, e))?,
            )
        }
        Stage::Huffman => {
            let codebook = read_codebook(bodies[0]).map_err(|e| parse(0, e))?;
            let diff_code = read_table(bodies[1]).map_err(|e| parse(1, e))?;
            let (diff_count, diff_stream) = read_stream(bodies[2]).map_err(|e| parse(2, e))?;
            let index_code = read_table(bodies[3]).map_err(|e| parse(3, e))?;
            let (index_count, index_stream) = read_stream(bodies[4]).map_err(|e| parse(4, e))?;
            let mut br = ByteReader::new(bodies[5]);
            let flag_bits = br.u32("flag count").map_err(|e| parse(5, e))? as u64;
            let flags = stream_from(&mut br, flag_bits, "flags").map_err(|e| parse(5, e))?;
            expect_end(&br, "flags").map_err(|e| parse(5, e))?;
            let h = HuffmanLayer {
                rows,
                cols,
                bits: index_bits,
                codebook,
                diff_code,
                diff_count,
                diff_stream,
                index_code,
                index_count,
                index_stream,
                flags,
            };
            // full decode validates every stream against the header
            h.decode().map_err(at)?;
            LayerPayload::Huffman(h)
        }
    };
    let record = LayerRecord {
        name: name.clone(),
        payload,
    };
    if record.nnz() != nnz || record.index_bits() != index_bits || record.weight_bits() != weight_bits {
        return Err(at(Error::Corruption(format!(
            "header says nnz {nnz}, index bits {index_bits}, weight bits {weight_bits}; payloads give {}, {}, {}",
            record.nnz(),
            record.index_bits(),
            record.weight_bits()
        ))));
    }
    Ok(record)
}

pub fn deserialize(bytes: &[u8]) -> Result<CompressedModel> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"WPCM\"")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}, expected {VERSION}")));
    }
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        layers.push(read_record(&mut r, i)?);
    }
    let body = read_frame(&mut r, "biases")?;
    let mut br = ByteReader::new(body);
    let mut biases = Vec::with_capacity(count);
    for i in 0..count {
        let n = br.u32("bias length")? as usize;
        biases.push(br.f32s(n, "biases").map_err(|e| e.context(format!("layer {i}")))?);
    }
    expect_end(&br, "bias block")?;
    expect_end(&r, "container")?;
    CompressedModel::new(layers, biases).map_err(|e| Error::Corruption(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::reconstruct_dense;
    use crate::model::init_network;
    use crate::prune::encode_relative;
    use crate::quant::{quantize_layer, QuantConfig};

    fn staged(stage: Stage) -> CompressedModel {
        let net = init_network(&[12, 8, 3], 5).unwrap();
        let masks = crate::prune::magnitude_masks(&net, &[0.3, 0.5]).unwrap();
        let cfg = QuantConfig {
            bits: 2,
            ..QuantConfig::default()
        };
        let model = CompressedModel::from_records(&net, |i, layer| {
            let sparse = encode_relative(&layer.weights, masks.layer(i), 3)?;
            Ok(match stage {
                Stage::Dense => LayerPayload::Dense(layer.weights.clone()),
                Stage::Pruned => LayerPayload::Pruned(sparse),
                _ => LayerPayload::Quantized(QuantizedLayer::from_parts(&sparse, &quantize_layer(&sparse, &cfg)?)?),
            })
        })
        .unwrap();
        if stage == Stage::Huffman {
            model.entropy_coded().unwrap()
        } else {
            model
        }
    }

    #[test]
    fn every_stage_round_trips() {
        for stage in [Stage::Dense, Stage::Pruned, Stage::Quantized, Stage::Huffman] {
            let m = staged(stage);
            assert_eq!(m.stage(), Some(stage));
            let bytes = serialize(&m).unwrap();
            let back = deserialize(&bytes).unwrap();
            assert_eq!(back, m, "{stage:?}");
            assert_eq!(serialize(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn huffman_stage_is_lossless() {
        let q = staged(Stage::Quantized);
        let h = q.entropy_coded().unwrap();
        assert_eq!(h.unentropy().unwrap(), q);
        for (a, b) in q.layers().iter().zip(h.layers()) {
            assert_eq!(reconstruct_dense(a).unwrap(), reconstruct_dense(b).unwrap());
        }
    }

    #[test]
    fn empty_model_is_header_only() {
        let bytes = serialize(&CompressedModel::empty()).unwrap();
        assert_eq!(&bytes[..4], b"WPCM");
        // header, empty bias frame
        assert_eq!(bytes.len(), HEADER_BYTES + FRAME_BYTES);
        assert_eq!(deserialize(&bytes).unwrap(), CompressedModel::empty());
    }

    #[test]
    fn corrupted_payload_is_located() {
        let m = staged(Stage::Huffman);
        let bytes = serialize(&m).unwrap();
        let header = encode_record(&m.layers()[0]).unwrap().header.len();
        let mut bad = bytes.clone();
        // first byte of the first payload body (codebook) of layer 0
        bad[HEADER_BYTES + header + 4] ^= 0x10;
        let err = deserialize(&bad).unwrap_err().to_string();
        assert!(err.contains("layer 0 (ip1)") && err.contains("codebook") && err.contains("checksum"), "{err}");
    }

    #[test]
    fn every_single_byte_flip_is_rejected() {
        let bytes = serialize(&staged(Stage::Quantized)).unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x01;
            assert!(deserialize(&bad).is_err(), "flip at byte {i} accepted");
        }
    }

    #[test]
    fn header_errors() {
        let mut bytes = serialize(&staged(Stage::Dense)).unwrap();
        assert!(deserialize(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(deserialize(&longer), Err(Error::Corruption(_))));
        bytes[4] = 9;
        let err = deserialize(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)) && err.to_string().contains("version 9"));
        assert!(matches!(deserialize(b"WPDN\x01\x00\x00\x00"), Err(Error::Format(_))));
    }

    #[test]
    fn position_free_layers_serialize() {
        let net = init_network(&[4, 2], 1).unwrap();
        let m = CompressedModel::from_records(&net, |_, _| {
            Ok(LayerPayload::Quantized(QuantizedLayer::unpruned(
                2,
                4,
                Codebook::new(vec![0.25, -0.5])?,
                vec![0, 1, 1, 0, 1, 1, 1, 0],
            )?))
        })
        .unwrap();
        for m in [m.clone(), m.entropy_coded().unwrap()] {
            let bytes = serialize(&m).unwrap();
            assert_eq!(deserialize(&bytes).unwrap(), m);
        }
    }
}
