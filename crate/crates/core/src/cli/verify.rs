use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::container::{compute_stats, reconstruct_dense, CompressedModel, LayerPayload, Stage};
use crate::engine::{apply_layer, gemm_dense, relative_difference, spmm_relative};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::prune::encode_relative;

/// Largest relative output-norm difference tolerated between kernel paths.
pub const KERNEL_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{} {:<18} {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        match self.first_failure() {
            Some(c) => {
                let _ = writeln!(s, "verification failed at {}: {}", c.name, c.detail);
            }
            None => s.push_str("verification passed\n"),
        }
        s
    }

    fn push(&mut self, name: &'static str, outcome: std::result::Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

fn reconstruction(model: &CompressedModel) -> std::result::Result<String, String> {
    for record in model.layers() {
        let dense = reconstruct_dense(record).map_err(|e| e.to_string())?;
        let at = |m: String| format!("layer {}: {m}", record.name);
        match &record.payload {
            LayerPayload::Dense(_) => {}
            LayerPayload::Pruned(s) => {
                if dense.count_nonzero() != s.nnz() {
                    return Err(at(format!("{} nonzeros for nnz {}", dense.count_nonzero(), s.nnz())));
                }
            }
            LayerPayload::Quantized(q) => {
                let book = q.codebook().centroids();
                if let Some(v) = dense.as_slice().iter().find(|v| **v != 0.0 && !book.contains(v)) {
                    return Err(at(format!("value {v} is not a centroid")));
                }
            }
            LayerPayload::Huffman(h) => {
                let q = h.decode().map_err(|e| at(e.to_string()))?;
                if q.to_dense() != dense {
                    return Err(at("Huffman decode differs from reconstruction".into()));
                }
            }
        }
    }
    Ok(format!("{} layers reconstructed", model.layers().len()))
}

fn kernel_agreement(model: &CompressedModel, seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (record, bias) in model.layers().iter().zip(model.biases()) {
        let fail = |e: Error| format!("layer {}: {e}", record.name);
        let dense = reconstruct_dense(record).map_err(fail)?;
        let x = Matrix::from_vec(4, dense.cols(), (0..4 * dense.cols()).map(|_| rng.random::<f32>()).collect())
            .map_err(fail)?;
        let reference = gemm_dense(&dense, bias, &x).map_err(fail)?;
        let ones = Matrix::filled(dense.rows(), dense.cols(), 1.0);
        let bits = record.index_bits().max(1);
        let mut outputs = vec![
            ("stored", apply_layer(&record.payload, bias, &x).map_err(fail)?),
            ("sparse", spmm_relative(&encode_relative(&dense, &ones, bits).map_err(fail)?, bias, &x).map_err(fail)?),
        ];
        if let LayerPayload::Pruned(_) | LayerPayload::Dense(_) = &record.payload {
            outputs.push(("dense", gemm_dense(&dense, bias, &x).map_err(fail)?));
        }
        for (name, y) in outputs {
            let d = relative_difference(y.as_slice(), reference.as_slice());
            worst = worst.max(d);
            if !(d <= KERNEL_TOLERANCE) {
                return Err(format!("layer {}: {name} path deviates by {d:.2e}", record.name));
            }
        }
    }
    Ok(format!("max relative deviation {worst:.2e}"))
}

fn accounting(model: &CompressedModel, file_len: usize, stats_csv: Option<&str>) -> std::result::Result<String, String> {
    let stats = compute_stats(model, 32).map_err(|e| e.to_string())?;
    let (stage_bytes, breakdown) = match model.stage() {
        Some(Stage::Quantized) => (stats.total.pq_bytes, stats.pq),
        Some(Stage::Huffman) => (stats.total.pqh_bytes, stats.pqh),
        _ => (None, None),
    };
    if let Some(b) = stage_bytes {
        if b != file_len {
            return Err(format!("stats count {b} bytes but the file holds {file_len}"));
        }
    }
    if let Some(b) = breakdown {
        if b.total_bytes() != file_len {
            return Err(format!("breakdown sums to {} bytes, file holds {file_len}", b.total_bytes()));
        }
    }
    let Some(expected_csv) = stats_csv else {
        return Ok(format!("{file_len} bytes accounted"));
    };
    let regenerated = stats.to_csv();
    let found: Vec<&str> = expected_csv.lines().collect();
    let expected: Vec<&str> = regenerated.lines().collect();
    for i in 0..found.len().max(expected.len()) {
        let (a, b) = (expected.get(i).copied().unwrap_or(""), found.get(i).copied().unwrap_or(""));
        if a != b {
            return Err(format!("stats file line {} differs: expected \"{a}\", found \"{b}\"", i + 1));
        }
    }
    Ok(format!("{file_len} bytes accounted; stats file matches"))
}

/// Runs round-trip, reconstruction, kernel-agreement and accounting checks on container
/// bytes, stopping after a failed load.
pub fn verify_bytes(bytes: &[u8], stats_csv: Option<&str>) -> VerifyReport {
    let mut report = VerifyReport::default();
    let model = match CompressedModel::from_bytes(bytes) {
        Ok(m) => m,
        Err(e) => {
            report.push("load", Err(e.to_string()));
            return report;
        }
    };
    let stage = model.stage().map(Stage::name).unwrap_or("mixed");
    report.push("load", Ok(format!("{} layers, stage {stage}", model.layers().len())));
    report.push(
        "round trip",
        match model.to_bytes() {
            Ok(b) if b == bytes => Ok("re-serialization is byte-identical".into()),
            Ok(b) => Err(format!("re-serialization has {} bytes vs {}", b.len(), bytes.len())),
            Err(e) => Err(e.to_string()),
        },
    );
    report.push("reconstruction", reconstruction(&model));
    report.push("kernel agreement", kernel_agreement(&model, 0));
    report.push("accounting", accounting(&model, bytes.len(), stats_csv));
    report
}

/// Stats file that accompanies a container: `<stem>.stats.csv` next to it.
pub fn sibling_stats(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.stats.csv"))
}

/// Verifies a container file. The stats CSV is `stats` if given, else the sibling file if
/// it exists.
pub fn verify(path: &Path, stats: Option<&Path>) -> Result<VerifyReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let stats_path = stats.map(Path::to_path_buf).or_else(|| Some(sibling_stats(path)).filter(|p| p.exists()));
    let csv = stats_path
        .map(|p| std::fs::read_to_string(&p).map_err(|e| Error::Io(e).context(p.display().to_string())))
        .transpose()?;
    Ok(verify_bytes(&bytes, csv.as_deref()))
}
