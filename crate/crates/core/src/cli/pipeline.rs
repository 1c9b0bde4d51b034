use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::container::{compute_stats, CompressedModel, LayerPayload, QuantizedLayer, StatsReport};
use crate::engine::{run_network_compressed, CompressedEval};
use crate::error::{Error, Result};
use crate::model::{
    evaluate, init_network, load_mnist_dir, load_network, predict, save_network, sgd_train, Dataset, Network,
    TrainConfig,
};
use crate::prune::{encode_relative, prune_and_retrain, PruneMask};
use crate::quant::{finetune_quantized, quantize_layer, quantize_values, Codebook, IndexAssignment, QuantConfig};

use super::config::{PipelineConfig, StageName};

#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads MNIST from the configured directory, truncating the training set if asked.
pub fn load_data(cfg: &PipelineConfig) -> Result<MnistData> {
    let (train, test) = load_mnist_dir(&cfg.data.mnist_dir).map_err(|e| {
        e.context(format!(
            "loading MNIST from {} (scripts/fetch_mnist.sh downloads it)",
            cfg.data.mnist_dir.display()
        ))
    })?;
    let train = if cfg.data.train_limit > 0 && cfg.data.train_limit < train.len() {
        train.head(cfg.data.train_limit)
    } else {
        train
    };
    Ok(MnistData { train, test })
}

/// Pruned container from a network whose pruned weights are exactly zero.
pub fn pruned_container(network: &Network, index_bits: u8) -> Result<CompressedModel> {
    let mask = PruneMask::from_nonzero(network);
    CompressedModel::from_records(network, |i, layer| {
        Ok(LayerPayload::Pruned(encode_relative(&layer.weights, mask.layer(i), index_bits)?))
    })
}

#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub model: CompressedModel,
    /// Dense network whose weights are the codebook lookups of `model`.
    pub network: Network,
    pub notes: Vec<String>,
    pub losses: Vec<f32>,
}

/// Clusters every layer and fine-tunes the codebooks. With `pruned`, only nonzero
/// weights are clustered and positions are stored as relative diffs of `index_bits`;
/// otherwise every weight gets an index and no positions are stored.
pub fn quantize_network(
    network: &Network,
    pruned: bool,
    index_bits: u8,
    quant: impl Fn(usize) -> QuantConfig,
    finetune: &TrainConfig,
    data: &Dataset,
) -> Result<QuantizeOutcome> {
    let mask = if pruned {
        PruneMask::from_nonzero(network)
    } else {
        PruneMask::all_ones(network)
    };
    let mut layers = Vec::new();
    let mut notes = Vec::new();
    for (i, layer) in network.layers().iter().enumerate() {
        let cfg = quant(i);
        let ctx = |e: Error| e.context(format!("quantizing layer {}", i + 1));
        let (rows, cols) = layer.weights.shape();
        let q = if pruned {
            let sparse = encode_relative(&layer.weights, mask.layer(i), index_bits).map_err(ctx)?;
            let qw = quantize_layer(&sparse, &cfg).map_err(ctx)?;
            notes.extend(qw.note.clone().map(|n| format!("layer {}: {n}", i + 1)));
            QuantizedLayer::from_parts(&sparse, &qw)?
        } else {
            let qw = quantize_values(layer.weights.as_slice(), &cfg).map_err(ctx)?;
            notes.extend(qw.note.clone().map(|n| format!("layer {}: {n}", i + 1)));
            QuantizedLayer::unpruned(rows, cols, qw.codebook, qw.assignment.indices().to_vec())?
        };
        layers.push(q);
    }
    let codebooks: Vec<Codebook> = layers.iter().map(|q| q.codebook().clone()).collect();
    let assignments = layers.iter().map(QuantizedLayer::assignment).collect::<Result<Vec<IndexAssignment>>>()?;
    let tuned = finetune_quantized(network, &codebooks, &assignments, mask.layers(), data, finetune)?;
    let tuned_layers = layers
        .iter()
        .zip(&tuned.codebooks)
        .map(|(q, book)| q.with_codebook(book.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut it = tuned_layers.into_iter();
    let model = CompressedModel::from_records(&tuned.network, |_, _| {
        Ok(LayerPayload::Quantized(it.next().expect("one layer per record")))
    })?;
    Ok(QuantizeOutcome {
        model,
        network: tuned.network,
        notes,
        losses: tuned.losses,
    })
}

/// Share of positions where two prediction lists agree.
pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage: StageName,
    pub test_error: f64,
    /// Serialized size of the stage's artifact.
    pub bytes: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub dense: Network,
    pub pruned: Option<Network>,
    pub quantized: Option<QuantizeOutcome>,
    pub huffman: Option<CompressedModel>,
    pub stats: Option<StatsReport>,
    pub stages: Vec<StageResult>,
    /// Compressed-kernel vs reconstructed-network prediction agreement after quantization.
    pub kernel_agreement: Option<f64>,
    /// Huffman-stage predictions identical to quantized-stage predictions.
    pub huffman_identical: Option<bool>,
    pub breaches: Vec<String>,
}

impl PipelineOutcome {
    pub fn error_of(&self, stage: StageName) -> Option<f64> {
        self.stages.iter().find(|s| s.stage == stage).map(|s| s.test_error)
    }

    pub fn stage_log_csv(&self) -> String {
        let mut s = String::from("stage,test_error,bytes,seconds\n");
        for r in &self.stages {
            s.push_str(&format!("{},{:.6},{},{:.1}\n", r.stage.name(), r.test_error, r.bytes, r.seconds));
        }
        s
    }
}

/// Test error of the latest stage above the previous stage's plus the tolerance.
fn stage_breach(stages: &[StageResult], tolerance: f64) -> Option<String> {
    let [.., prev, cur] = stages else {
        return None;
    };
    (cur.test_error > prev.test_error + tolerance + 1e-12).then(|| {
        format!(
            "{} error {:.2}% exceeds {} error {:.2}% + {:.2}%",
            cur.stage.name(),
            cur.test_error * 100.0,
            prev.stage.name(),
            prev.test_error * 100.0,
            tolerance * 100.0
        )
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(e).context(path.display().to_string()))
}

/// Writes `<stem>.wpcm`, plus `<stem>.stats.csv` for quantized and Huffman containers.
pub fn save_container(model: &CompressedModel, dir: &Path, stem: &str) -> Result<usize> {
    let bytes = model.to_bytes()?;
    write_file(&dir.join(format!("{stem}.wpcm")), &bytes)?;
    if matches!(model.stage(), Some(crate::container::Stage::Quantized | crate::container::Stage::Huffman)) {
        write_file(&dir.join(format!("{stem}.stats.csv")), compute_stats(model, 32)?.to_csv())?;
    }
    Ok(bytes.len())
}

fn dense_bytes(net: &Network) -> usize {
    (net.weight_count() + net.layers().iter().map(|l| l.bias.len()).sum::<usize>()) * 4
}

/// Runs the configured stages, writing artifacts to `cfg.output.dir`:
/// `dense.wpdn`, `pruned.wpdn` + `pruned.wpcm`, `quantized.wpcm`, `huffman.wpcm`,
/// per-container `*.stats.csv`, `stages.csv`, `summary.txt` and the effective `config.toml`.
pub fn run_pipeline(cfg: &PipelineConfig, data: &MnistData, log: &mut dyn Write) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(e).context(dir.display().to_string()))?;
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let mut stages = Vec::new();
    let mut breaches = Vec::new();
    let mut say = |m: String| {
        let _ = writeln!(log, "{m}");
    };

    let t = Instant::now();
    let dense = if cfg.has(StageName::Train) {
        let net = init_network(&cfg.network.dims, cfg.network.seed)?;
        say(format!("train: {} epochs on {} samples", cfg.train.epochs, data.train.len()));
        let net = sgd_train(net, &data.train, &cfg.train, None)
            .map_err(|e| e.context("train stage"))?
            .network;
        save_network(&net, &dir.join("dense.wpdn"))?;
        net
    } else {
        let path = cfg.network.resume.as_ref().expect("validated");
        say(format!("train: resuming from {}", path.display()));
        load_network(path)?
    };
    let dense_error = evaluate(&dense, &data.test)?;
    say(format!("  test error {:.2}%", dense_error * 100.0));
    stages.push(StageResult {
        stage: StageName::Train,
        test_error: dense_error,
        bytes: dense_bytes(&dense),
        seconds: t.elapsed().as_secs_f64(),
    });

    let mut pruned = None;
    let mut base = dense.clone();
    if cfg.has(StageName::Prune) {
        let t = Instant::now();
        say(format!("prune: densities {:?}, retrain {} epochs", cfg.prune.densities, cfg.prune.retrain.epochs));
        let out = prune_and_retrain(dense.clone(), &data.train, &cfg.prune).map_err(|e| e.context("prune stage"))?;
        save_network(&out.network, &dir.join("pruned.wpdn"))?;
        let bytes = save_container(&pruned_container(&out.network, cfg.prune.index_bits)?, dir, "pruned")?;
        let err = evaluate(&out.network, &data.test)?;
        say(format!(
            "  density {:.2}%, test error {:.2}%",
            out.mask.density() * 100.0,
            err * 100.0
        ));
        stages.push(StageResult {
            stage: StageName::Prune,
            test_error: err,
            bytes,
            seconds: t.elapsed().as_secs_f64(),
        });
        if let Some(m) = stage_breach(&stages, cfg.tolerance) {
            say(format!("  BREACH: {m}"));
            breaches.push(m);
        }
        base = out.network.clone();
        pruned = Some(out.network);
    }

    let mut quantized = None;
    let mut kernel_agreement = None;
    let mut quant_eval: Option<CompressedEval> = None;
    if cfg.has(StageName::Quantize) {
        let t = Instant::now();
        say(format!(
            "quantize: {} bits, {} init, fine-tune {} epochs",
            cfg.quantize.bits,
            cfg.quantize.init.name(),
            cfg.quantize.finetune.epochs
        ));
        let out = quantize_network(
            &base,
            pruned.is_some(),
            cfg.prune.index_bits,
            |i| cfg.quant_for(i),
            &cfg.quantize.finetune,
            &data.train,
        )
        .map_err(|e| e.context("quantize stage"))?;
        for n in &out.notes {
            say(format!("  note: {n}"));
        }
        let bytes = save_container(&out.model, dir, "quantized")?;
        let eval = run_network_compressed(&out.model, &data.test)?;
        let reconstructed = predict(&out.network, &data.test)?;
        let agree = agreement(&eval.predictions, &reconstructed);
        say(format!(
            "  test error {:.2}% (compressed kernels), prediction agreement with dense reconstruction {:.4}",
            eval.error * 100.0,
            agree
        ));
        if agree < 0.999 {
            breaches.push(format!("compressed and reconstructed predictions agree on only {agree:.4}"));
        }
        stages.push(StageResult {
            stage: StageName::Quantize,
            test_error: eval.error,
            bytes,
            seconds: t.elapsed().as_secs_f64(),
        });
        if let Some(m) = stage_breach(&stages, cfg.tolerance) {
            say(format!("  BREACH: {m}"));
            breaches.push(m);
        }
        kernel_agreement = Some(agree);
        quant_eval = Some(eval);
        quantized = Some(out);
    }

    let mut huffman = None;
    let mut huffman_identical = None;
    if cfg.has(StageName::Huffman) {
        let t = Instant::now();
        let q = quantized.as_ref().expect("validated");
        let model = q.model.entropy_coded()?;
        let bytes = save_container(&model, dir, "huffman")?;
        let eval = run_network_compressed(&model, &data.test)?;
        let same = quant_eval.as_ref().map(|e| e.predictions == eval.predictions);
        say(format!(
            "huffman: {bytes} bytes, test error {:.2}%, predictions identical to quantized: {}",
            eval.error * 100.0,
            same.unwrap_or(false)
        ));
        if same != Some(true) {
            breaches.push("huffman-stage predictions differ from quantized-stage predictions".into());
        }
        stages.push(StageResult {
            stage: StageName::Huffman,
            test_error: eval.error,
            bytes,
            seconds: t.elapsed().as_secs_f64(),
        });
        if let Some(m) = stage_breach(&stages, cfg.tolerance) {
            say(format!("  BREACH: {m}"));
            breaches.push(m);
        }
        huffman_identical = same;
        huffman = Some(model);
    }

    let final_model = huffman.as_ref().or(quantized.as_ref().map(|q| &q.model));
    let stats = final_model.map(|m| compute_stats(m, 32)).transpose()?;
    let outcome = PipelineOutcome {
        dense,
        pruned,
        quantized,
        huffman,
        stats,
        stages,
        kernel_agreement,
        huffman_identical,
        breaches,
    };
    write_file(&dir.join("stages.csv"), outcome.stage_log_csv())?;
    let mut summary = outcome.stage_log_csv();
    if let Some(s) = &outcome.stats {
        summary.push('\n');
        summary.push_str(&s.to_csv());
        summary.push('\n');
        summary.push_str(&s.summary());
    }
    for b in &outcome.breaches {
        summary.push_str(&format!("BREACH: {b}\n"));
    }
    write_file(&dir.join("summary.txt"), &summary)?;
    let _ = write!(log, "{summary}");
    Ok(outcome)
}
