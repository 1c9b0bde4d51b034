use std::fmt::Write as _;

use crate::error::Result;

use super::format::{encode_record, Category, EncodedRecord, FRAME_BYTES, HEADER_BYTES};
use super::layer::{LayerPayload, LayerRecord, Stage};
use super::CompressedModel;

pub const CSV_HEADER: &str = "Layer,#Weights,Weights% (P),Weight bits (P+Q),Weight bits (P+Q+H),\
Index bits (P+Q),Index bits (P+Q+H),Compress rate (P+Q),Compress rate (P+Q+H)";

/// One row of the storage report. Sizes are serialized container bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub name: String,
    pub weights: usize,
    pub biases: usize,
    pub nnz: usize,
    /// Relative-index entries including fillers; zero for dense layers.
    pub entries: usize,
    pub fillers: usize,
    pub weight_bits_pq: Option<f64>,
    pub weight_bits_pqh: Option<f64>,
    pub index_bits_pq: Option<f64>,
    pub index_bits_pqh: Option<f64>,
    pub original_bits: u64,
    pub pq_bytes: Option<usize>,
    pub pqh_bytes: Option<usize>,
    /// Index and diff stream bits before and after entropy coding.
    pub pq_stream_bits: Option<u64>,
    pub pqh_stream_bits: Option<u64>,
    /// `nnz·ceil(log2 k) + nnz·b + 32k`: the size ignoring fillers, flags and framing.
    pub formula_pq_bits: Option<u64>,
}

impl LayerStats {
    pub fn density(&self) -> f64 {
        if self.weights == 0 {
            0.0
        } else {
            self.nnz as f64 / self.weights as f64
        }
    }

    /// Original size over compressed size.
    pub fn rate_pq(&self) -> Option<f64> {
        self.pq_bytes.map(|b| self.original_bits as f64 / (b as f64 * 8.0))
    }

    pub fn rate_pqh(&self) -> Option<f64> {
        self.pqh_bytes.map(|b| self.original_bits as f64 / (b as f64 * 8.0))
    }

    /// Fraction of weight-index and diff stream bits removed by Huffman coding.
    pub fn huffman_savings(&self) -> Option<f64> {
        match (self.pq_stream_bits, self.pqh_stream_bits) {
            (Some(q), Some(h)) if q > 0 => Some(1.0 - h as f64 / q as f64),
            _ => None,
        }
    }
}

/// Bytes by role for one stage of the whole model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Breakdown {
    pub weight_bytes: usize,
    pub index_bytes: usize,
    pub codebook_bytes: usize,
    pub table_bytes: usize,
    pub bias_bytes: usize,
    pub overhead_bytes: usize,
}

impl Breakdown {
    pub fn total_bytes(&self) -> usize {
        self.weight_bytes
            + self.index_bytes
            + self.codebook_bytes
            + self.table_bytes
            + self.bias_bytes
            + self.overhead_bytes
    }

    /// Weight, index and codebook shares of their combined size.
    pub fn shares(&self) -> [f64; 3] {
        let sum = (self.weight_bytes + self.index_bytes + self.codebook_bytes) as f64;
        [
            self.weight_bytes as f64 / sum,
            self.index_bytes as f64 / sum,
            self.codebook_bytes as f64 / sum,
        ]
    }

    fn add(&mut self, enc: &EncodedRecord) {
        self.weight_bytes += enc.payload_bytes(Category::Weight);
        self.index_bytes += enc.payload_bytes(Category::Index);
        self.codebook_bytes += enc.payload_bytes(Category::Codebook);
        self.table_bytes += enc.payload_bytes(Category::Table);
        self.overhead_bytes += enc.overhead_bytes();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub layers: Vec<LayerStats>,
    pub total: LayerStats,
    pub pq: Option<Breakdown>,
    pub pqh: Option<Breakdown>,
}

fn bias_share(len: usize) -> usize {
    4 + 4 * len
}

fn entry_counts(record: &LayerRecord) -> (usize, usize) {
    match &record.payload {
        LayerPayload::Dense(_) => (0, 0),
        LayerPayload::Pruned(s) => (s.entry_count(), s.stream().filler_count()),
        LayerPayload::Quantized(q) => (q.index().entry_count(), q.index().entry_count() - q.nnz()),
        LayerPayload::Huffman(h) => (h.entry_count(), h.entry_count() - h.nnz()),
    }
}

fn ratio(num: u64, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn weighted(rows: &[LayerStats], value: impl Fn(&LayerStats) -> Option<f64>, weight: impl Fn(&LayerStats) -> usize) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for r in rows {
        let w = weight(r);
        if w > 0 {
            num += value(r)? * w as f64;
            den += w;
        }
    }
    (den > 0).then(|| num / den as f64)
}

fn sum_opt<T: std::iter::Sum<T> + Copy>(rows: &[LayerStats], f: impl Fn(&LayerStats) -> Option<T>) -> Option<T> {
    rows.iter().map(f).collect::<Option<Vec<T>>>().map(|v| v.into_iter().sum())
}

/// Storage report for a model. Quantized layers fill the P+Q columns; Huffman layers
/// fill both (P+Q from their decoded form). Missing stages stay blank.
pub fn compute_stats(model: &CompressedModel, original_bits_per_weight: u32) -> Result<StatsReport> {
    let mut layers = Vec::with_capacity(model.layers().len());
    let mut pq = Some(Breakdown::default());
    let mut pqh = Some(Breakdown::default());
    for (record, bias) in model.layers().iter().zip(model.biases()) {
        let (rows, cols) = record.shape();
        let (entries, fillers) = entry_counts(record);
        let nnz = record.nnz();
        let quantized = match record.stage() {
            Stage::Quantized | Stage::Huffman => Some(record.unentropy()?),
            _ => None,
        };
        let huffman = (record.stage() == Stage::Huffman).then(|| record.clone());

        let mut row = LayerStats {
            name: record.name.clone(),
            weights: rows * cols,
            biases: bias.len(),
            nnz,
            entries,
            fillers,
            weight_bits_pq: None,
            weight_bits_pqh: None,
            index_bits_pq: None,
            index_bits_pqh: None,
            original_bits: (rows * cols + bias.len()) as u64 * original_bits_per_weight as u64,
            pq_bytes: None,
            pqh_bytes: None,
            pq_stream_bits: None,
            pqh_stream_bits: None,
            formula_pq_bits: None,
        };
        if let Some(q) = &quantized {
            let enc = encode_record(q)?;
            row.pq_bytes = Some(enc.size() + bias_share(bias.len()));
            let wb = q.weight_bits() as u64;
            let ib = q.index_bits() as u64;
            row.weight_bits_pq = Some(wb as f64);
            row.index_bits_pq = Some(ib as f64);
            row.pq_stream_bits = Some(nnz as u64 * wb + entries as u64 * ib);
            if let LayerPayload::Quantized(ql) = &q.payload {
                row.formula_pq_bits = Some(nnz as u64 * (wb + ib) + 32 * ql.codebook().len() as u64);
            }
            if let Some(b) = pq.as_mut() {
                b.add(&enc);
            }
        } else {
            pq = None;
        }
        if let Some(h) = &huffman {
            let enc = encode_record(h)?;
            row.pqh_bytes = Some(enc.size() + bias_share(bias.len()));
            if let LayerPayload::Huffman(hl) = &h.payload {
                let ib = hl.index_stream().bit_count();
                let db = hl.diff_stream().bit_count();
                row.weight_bits_pqh = ratio(ib, nnz);
                row.index_bits_pqh = ratio(db, entries);
                row.pqh_stream_bits = Some(ib + db);
            }
            if let Some(b) = pqh.as_mut() {
                b.add(&enc);
            }
        } else {
            pqh = None;
        }
        layers.push(row);
    }

    let bias_bytes: usize = model.biases().iter().map(|b| bias_share(b.len())).sum();
    let file_overhead = HEADER_BYTES + FRAME_BYTES;
    for b in [pq.as_mut(), pqh.as_mut()].into_iter().flatten() {
        b.bias_bytes = bias_bytes;
        b.overhead_bytes += file_overhead;
    }
    let nonempty = !layers.is_empty();
    let total = LayerStats {
        name: "Total".into(),
        weights: layers.iter().map(|r| r.weights).sum(),
        biases: layers.iter().map(|r| r.biases).sum(),
        nnz: layers.iter().map(|r| r.nnz).sum(),
        entries: layers.iter().map(|r| r.entries).sum(),
        fillers: layers.iter().map(|r| r.fillers).sum(),
        weight_bits_pq: weighted(&layers, |r| r.weight_bits_pq, |r| r.nnz),
        weight_bits_pqh: weighted(&layers, |r| r.weight_bits_pqh, |r| r.nnz),
        index_bits_pq: weighted(&layers, |r| r.index_bits_pq, |r| r.entries),
        index_bits_pqh: weighted(&layers, |r| r.index_bits_pqh, |r| r.entries),
        original_bits: layers.iter().map(|r| r.original_bits).sum(),
        pq_bytes: sum_opt(&layers, |r| r.pq_bytes)
            .filter(|_| nonempty)
            .map(|b| b + file_overhead),
        pqh_bytes: sum_opt(&layers, |r| r.pqh_bytes)
            .filter(|_| nonempty)
            .map(|b| b + file_overhead),
        pq_stream_bits: sum_opt(&layers, |r| r.pq_stream_bits),
        pqh_stream_bits: sum_opt(&layers, |r| r.pqh_stream_bits),
        formula_pq_bits: sum_opt(&layers, |r| r.formula_pq_bits),
    };
    Ok(StatsReport {
        layers,
        total,
        pq: pq.filter(|_| nonempty),
        pqh: pqh.filter(|_| nonempty),
    })
}

fn bits_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.fract() == 0.0 => format!("{x:.0}"),
        Some(x) => format!("{x:.2}"),
        None => String::new(),
    }
}

fn rate_cell(rate: Option<f64>, with_factor: bool) -> String {
    match rate {
        Some(r) if with_factor => format!("{:.2}% ({r:.1}x)", 100.0 / r),
        Some(r) => format!("{:.2}%", 100.0 / r),
        None => String::new(),
    }
}

impl StatsReport {
    fn csv_row(row: &LayerStats, total: bool) -> String {
        let density = if total && row.nnz > 0 {
            format!("{:.2}% ({:.1}x)", row.density() * 100.0, 1.0 / row.density())
        } else {
            format!("{:.2}%", row.density() * 100.0)
        };
        let cells = [
            row.name.clone(),
            row.weights.to_string(),
            density,
            bits_cell(row.weight_bits_pq),
            bits_cell(row.weight_bits_pqh),
            bits_cell(row.index_bits_pq),
            bits_cell(row.index_bits_pqh),
            rate_cell(row.rate_pq(), total),
            rate_cell(row.rate_pqh(), total),
        ];
        cells
            .iter()
            .map(|c| if c.contains(',') { format!("\"{c}\"") } else { c.clone() })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Table with one row per layer plus a totals row. Rates are compressed size as a
    /// percentage of the original; the totals row adds the reduction factor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.layers {
            out.push_str(&Self::csv_row(row, false));
            out.push('\n');
        }
        out.push_str(&Self::csv_row(&self.total, true));
        out.push('\n');
        out
    }

    /// Human-readable summary including the weight / index / codebook breakdown.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let t = &self.total;
        let _ = writeln!(
            s,
            "weights {} (+{} biases), survivors {} ({:.2}%), sparse entries {} incl. {} fillers",
            t.weights,
            t.biases,
            t.nnz,
            t.density() * 100.0,
            t.entries,
            t.fillers
        );
        let _ = writeln!(s, "original {} bytes", t.original_bits / 8);
        for (label, bytes, rate, breakdown) in [
            ("P+Q", t.pq_bytes, t.rate_pq(), self.pq),
            ("P+Q+H", t.pqh_bytes, t.rate_pqh(), self.pqh),
        ] {
            let (Some(bytes), Some(rate), Some(b)) = (bytes, rate, breakdown) else {
                let _ = writeln!(s, "{label}: not available");
                continue;
            };
            let [w, i, c] = b.shares();
            let _ = writeln!(
                s,
                "{label}: {bytes} bytes, {rate:.2}x; weight {:.1}% / index {:.1}% / codebook {:.1}% \
                 (tables {} B, biases {} B, framing {} B)",
                w * 100.0,
                i * 100.0,
                c * 100.0,
                b.table_bytes,
                b.bias_bytes,
                b.overhead_bytes
            );
        }
        if let Some(bits) = t.formula_pq_bits {
            let _ = writeln!(
                s,
                "P+Q without fillers, flags, biases or framing: {bits} bits, {:.2}x over weights alone",
                (t.weights as f64 * 32.0) / bits as f64
            );
        }
        if let Some(sav) = t.huffman_savings() {
            let _ = writeln!(s, "Huffman savings on index and diff streams: {:.1}%", sav * 100.0);
        }
        s
    }
}
