use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{reconstruct_dense, CompressedModel, LayerPayload, QuantizedLayer};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::prune::{encode_relative, SparseLayer};

use super::{gemm_dense, relative_difference, spmm_quantized_layer, spmm_relative};

pub const CSV_HEADER: &str = "layer,representation,batch,median_us,reps,checksum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Representation {
    Dense,
    Sparse,
    Quantized,
}

impl Representation {
    pub const ALL: [Representation; 3] = [Representation::Dense, Representation::Sparse, Representation::Quantized];

    pub fn name(self) -> &'static str {
        match self {
            Representation::Dense => "dense",
            Representation::Sparse => "sparse",
            Representation::Quantized => "quantized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub layer: String,
    pub representation: Representation,
    pub batch: usize,
    pub median_us: f64,
    pub reps: usize,
    /// Sum of all outputs.
    pub checksum: f64,
    /// Estimated bytes read and written per call.
    pub bytes: u64,
    pub flops: u64,
    /// Relative output-norm difference against the dense path.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelReport {
    pub rows: Vec<BenchRow>,
}

impl KernelReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.3},{},{:.9e}",
                r.layer,
                r.representation.name(),
                r.batch,
                r.median_us,
                r.reps,
                r.checksum
            );
        }
        s
    }

    /// Largest deviation of any path from the dense path.
    pub fn max_deviation(&self) -> f64 {
        self.rows.iter().map(|r| r.deviation).fold(0.0, f64::max)
    }

    /// Timings with bytes-per-flop estimates; vector products touch every weight once
    /// per input while batched products reuse it across the batch.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<10} {:>5} {:>12} {:>10} {:>11}",
            "layer", "repr", "batch", "median_us", "bytes/flop", "deviation"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<10} {:>5} {:>12.2} {:>10.3} {:>11.2e}",
                r.layer,
                r.representation.name(),
                r.batch,
                r.median_us,
                r.bytes as f64 / r.flops.max(1) as f64,
                r.deviation
            );
        }
        s
    }
}

struct Forms {
    name: String,
    dense: Matrix,
    sparse: SparseLayer,
    quantized: QuantizedLayer,
    bias: Vec<f32>,
}

fn forms(model: &CompressedModel) -> Result<Vec<Forms>> {
    model
        .layers()
        .iter()
        .zip(model.biases())
        .map(|(record, bias)| {
            let quantized = match &record.payload {
                LayerPayload::Quantized(q) => q.clone(),
                LayerPayload::Huffman(h) => h.decode()?,
                _ => {
                    return Err(Error::Argument(format!(
                        "layer {} is {}; the benchmark needs quantized layers",
                        record.name,
                        record.stage().name()
                    )))
                }
            };
            let dense = reconstruct_dense(record)?;
            let bits = quantized.index().bits().max(1);
            let ones = Matrix::filled(dense.rows(), dense.cols(), 1.0);
            let sparse = encode_relative(&dense, &ones, bits)?;
            Ok(Forms {
                name: record.name.clone(),
                dense,
                sparse,
                quantized,
                bias: bias.clone(),
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Times every layer of a quantized model as dense, relative-index sparse and
/// codebook-indirect products at each batch size. Inputs are seeded uniform [0, 1).
pub fn benchmark(model: &CompressedModel, batch_sizes: &[usize], reps: usize, seed: u64) -> Result<KernelReport> {
    if reps < 3 {
        return Err(Error::Argument(format!("benchmark needs at least 3 repetitions, got {reps}")));
    }
    if batch_sizes.is_empty() || batch_sizes.contains(&0) {
        return Err(Error::Argument("batch sizes must be nonempty and positive".into()));
    }
    let layers = forms(model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for f in &layers {
        let (out, inp) = f.dense.shape();
        for &batch in batch_sizes {
            let x = Matrix::from_vec(batch, inp, (0..batch * inp).map(|_| rng.random::<f32>()).collect())?;
            let io = (batch * (inp + out) * 4) as u64;
            let mut reference: Option<Matrix> = None;
            for repr in Representation::ALL {
                let run = || match repr {
                    Representation::Dense => gemm_dense(&f.dense, &f.bias, &x),
                    Representation::Sparse => spmm_relative(&f.sparse, &f.bias, &x),
                    Representation::Quantized => spmm_quantized_layer(&f.quantized, &f.bias, &x),
                };
                let mut times = Vec::with_capacity(reps);
                let mut y = run()?;
                for _ in 0..reps {
                    let t = Instant::now();
                    y = run()?;
                    times.push(t.elapsed().as_secs_f64() * 1e6);
                }
                let (bytes, flops) = match repr {
                    Representation::Dense => ((out * inp * 4) as u64 + io, (2 * out * inp * batch) as u64),
                    Representation::Sparse => {
                        let e = f.sparse.entry_count() as u64;
                        (e * (f.sparse.stream().bits_per_index() as u64 + 32) / 8 + io, (2 * f.sparse.nnz() * batch) as u64)
                    }
                    Representation::Quantized => {
                        let q = &f.quantized;
                        let e = q.index().entry_count() as u64;
                        let idx = q.nnz() as u64 * q.codebook().index_bits() as u64;
                        (
                            (e * q.index().bits() as u64 + idx) / 8 + 4 * q.codebook().len() as u64 + io,
                            (2 * q.nnz() * batch) as u64,
                        )
                    }
                };
                let deviation = match &reference {
                    Some(r) => relative_difference(y.as_slice(), r.as_slice()),
                    None => 0.0,
                };
                rows.push(BenchRow {
                    layer: f.name.clone(),
                    representation: repr,
                    batch,
                    median_us: median(times),
                    reps,
                    checksum: y.as_slice().iter().map(|v| *v as f64).sum(),
                    bytes,
                    flops,
                    deviation,
                });
                if reference.is_none() {
                    reference = Some(y);
                }
            }
        }
    }
    Ok(KernelReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::QuantizedLayer;
    use crate::model::init_network;
    use crate::prune::magnitude_masks;
    use crate::quant::{quantize_layer, QuantConfig};

    fn model() -> CompressedModel {
        let net = init_network(&[30, 20, 5], 2).unwrap();
        let masks = magnitude_masks(&net, &[0.2, 0.5]).unwrap();
        CompressedModel::from_records(&net, |i, l| {
            let s = encode_relative(&l.weights, masks.layer(i), 4)?;
            let q = quantize_layer(&s, &QuantConfig { bits: 3, ..Default::default() })?;
            Ok(LayerPayload::Quantized(QuantizedLayer::from_parts(&s, &q)?))
        })
        .unwrap()
    }

    #[test]
    fn report_structure() {
        let m = model().entropy_coded().unwrap();
        let r = benchmark(&m, &[1, 64], 3, 0).unwrap();
        assert_eq!(r.rows.len(), 2 * 3 * 2);
        let csv = r.to_csv();
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 13);
        assert!(r.max_deviation() <= 1e-5);
        for chunk in r.rows.chunks(3) {
            let c = chunk[0].checksum;
            assert!(chunk.iter().all(|x| (x.checksum - c).abs() <= 1e-4 * c.abs().max(1.0)));
        }
        assert!(r.summary().contains("bytes/flop"));
    }

    #[test]
    fn argument_checks() {
        let m = model();
        assert!(benchmark(&m, &[1], 2, 0).is_err());
        assert!(benchmark(&m, &[], 3, 0).is_err());
        let dense = CompressedModel::from_network(&init_network(&[3, 2], 0).unwrap()).unwrap();
        assert!(benchmark(&dense, &[1], 3, 0).is_err());
    }
}
