use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use weightpress::cli::{
    load_data, pruned_container, quantize_network, run_pipeline, save_container, sweep, verify, PipelineConfig,
    SweepBase, SweepKind, SweepSpec,
};
use weightpress::container::{compute_stats, CompressedModel};
use weightpress::engine::{benchmark, run_network_compressed};
use weightpress::model::{evaluate, init_network, load_network, save_network, sgd_train};
use weightpress::prune::prune_and_retrain;
use weightpress::quant::InitMethod;
use weightpress::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "weightpress", version, about = "Prune, quantize and Huffman-code dense networks")]
struct Cli {
    /// TOML configuration; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Derive every seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the dense network and write dense.wpdn.
    Train,
    /// Prune and retrain a dense model; writes pruned.wpdn and pruned.wpcm.
    Prune {
        /// Dense model (default: <out>/dense.wpdn).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Cluster weights into shared codebooks and fine-tune; writes quantized.wpcm.
    Quantize {
        /// Model to quantize (default: <out>/pruned.wpdn, or dense.wpdn with --unpruned).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        bits: Option<u8>,
        /// forgy, density or linear.
        #[arg(long, value_parser = parse_init)]
        init: Option<InitMethod>,
        /// Index every weight instead of only the nonzero ones.
        #[arg(long)]
        unpruned: bool,
    },
    /// Huffman-code a quantized container; writes huffman.wpcm.
    Huffman {
        /// Quantized container (default: <out>/quantized.wpcm).
        container: Option<PathBuf>,
    },
    /// Print the per-layer storage table of a container.
    Stats {
        container: PathBuf,
        /// Also write the table to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Test error of a dense model (.wpdn) or a container (.wpcm).
    Eval { model: PathBuf },
    /// Time dense, sparse and quantized kernels on every layer; writes bench.csv.
    Bench {
        container: PathBuf,
        /// Comma separated batch sizes.
        #[arg(long, value_delimiter = ',')]
        batch: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Run a sweep experiment; writes sweep_<kind>.csv.
    Sweep {
        /// bits_vs_accuracy, rate_vs_accuracy or init_comparison.
        #[arg(value_parser = parse_sweep)]
        kind: SweepKind,
        /// Dense base model (default: <out>/dense.wpdn).
        #[arg(long)]
        dense: Option<PathBuf>,
        /// Pruned base model (default: <out>/pruned.wpdn).
        #[arg(long)]
        pruned: Option<PathBuf>,
    },
    /// Check a container: round trip, reconstruction, kernel agreement, accounting.
    Verify {
        container: PathBuf,
        /// Stats CSV to check against (default: <stem>.stats.csv if present).
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run the configured stages end to end.
    Pipeline,
}

fn parse_init(s: &str) -> std::result::Result<InitMethod, String> {
    InitMethod::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown init '{s}' (forgy, density, linear)"))
}

fn parse_sweep(s: &str) -> std::result::Result<SweepKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Outcome {
    Ok,
    Failed,
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    let dir = cfg.output.dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(e).context(dir.display().to_string()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(e).context(path.display().to_string()))
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(Outcome::Ok);
    }
    let Some(command) = cli.command else {
        return Err(Error::Argument("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Train => {
            let data = load_data(&cfg)?;
            let dir = out_dir(&cfg)?;
            let net = init_network(&cfg.network.dims, cfg.network.seed)?;
            let net = sgd_train(net, &data.train, &cfg.train, None)?.network;
            save_network(&net, &dir.join("dense.wpdn"))?;
            println!("test error {:.2}%", evaluate(&net, &data.test)? * 100.0);
        }
        Command::Prune { model } => {
            let data = load_data(&cfg)?;
            let dir = out_dir(&cfg)?;
            let dense = load_network(&model.unwrap_or_else(|| dir.join("dense.wpdn")))?;
            let out = prune_and_retrain(dense, &data.train, &cfg.prune)?;
            save_network(&out.network, &dir.join("pruned.wpdn"))?;
            let bytes = save_container(&pruned_container(&out.network, cfg.prune.index_bits)?, dir, "pruned")?;
            println!(
                "density {:.2}%, {bytes} bytes, test error {:.2}%",
                out.mask.density() * 100.0,
                evaluate(&out.network, &data.test)? * 100.0
            );
        }
        Command::Quantize {
            model,
            bits,
            init,
            unpruned,
        } => {
            let mut cfg = cfg;
            if let Some(b) = bits {
                cfg.quantize.bits = b;
                cfg.layer_bits.clear();
            }
            if let Some(i) = init {
                cfg.quantize.init = i;
            }
            let data = load_data(&cfg)?;
            let dir = out_dir(&cfg)?;
            let default = if unpruned { "dense.wpdn" } else { "pruned.wpdn" };
            let net = load_network(&model.unwrap_or_else(|| dir.join(default)))?;
            let out = quantize_network(
                &net,
                !unpruned,
                cfg.prune.index_bits,
                |i| cfg.quant_for(i),
                &cfg.quantize.finetune,
                &data.train,
            )?;
            for n in &out.notes {
                eprintln!("note: {n}");
            }
            let bytes = save_container(&out.model, dir, "quantized")?;
            let eval = run_network_compressed(&out.model, &data.test)?;
            println!("{bytes} bytes, test error {:.2}%", eval.error * 100.0);
        }
        Command::Huffman { container } => {
            let dir = out_dir(&cfg)?;
            let model = CompressedModel::load(&container.unwrap_or_else(|| dir.join("quantized.wpcm")))?;
            let coded = model.entropy_coded()?;
            let bytes = save_container(&coded, dir, "huffman")?;
            println!("{bytes} bytes");
        }
        Command::Stats { container, csv } => {
            let report = compute_stats(&CompressedModel::load(&container)?, 32)?;
            let text = report.to_csv();
            if let Some(path) = csv {
                write(&path, &text)?;
            }
            print!("{text}\n{}", report.summary());
        }
        Command::Eval { model } => {
            let data = load_data(&cfg)?;
            let error = if model.extension().is_some_and(|e| e == "wpcm") {
                run_network_compressed(&CompressedModel::load(&model)?, &data.test)?.error
            } else {
                evaluate(&load_network(&model)?, &data.test)?
            };
            println!("test error {:.2}%", error * 100.0);
        }
        Command::Bench { container, batch, reps } => {
            let dir = out_dir(&cfg)?;
            let model = CompressedModel::load(&container)?;
            let batches = batch.unwrap_or_else(|| cfg.bench.batch_sizes.clone());
            let report = benchmark(&model, &batches, reps.unwrap_or(cfg.bench.reps), cfg.bench.seed)?;
            let text = report.to_csv();
            write(&dir.join("bench.csv"), &text)?;
            print!("{text}\n{}", report.summary());
        }
        Command::Sweep { kind, dense, pruned } => {
            let data = load_data(&cfg)?;
            let dir = out_dir(&cfg)?;
            let dense = load_network(&dense.unwrap_or_else(|| dir.join("dense.wpdn")))?;
            let pruned = load_network(&pruned.unwrap_or_else(|| dir.join("pruned.wpdn")))?;
            let finetune_data = if cfg.sweep.finetune_samples > 0 && cfg.sweep.finetune_samples < data.train.len() {
                data.train.head(cfg.sweep.finetune_samples)
            } else {
                data.train.clone()
            };
            let base = SweepBase {
                dense: &dense,
                pruned: &pruned,
                densities: &cfg.prune.densities,
                index_bits: cfg.prune.index_bits,
                quant: &cfg.quantize,
                retrain: &cfg.sweep.retrain,
                finetune: &cfg.sweep.finetune,
                train: &data.train,
                finetune_data: &finetune_data,
                test: &data.test,
            };
            let spec = SweepSpec::from_config(kind, &cfg.sweep);
            let table = sweep(&spec, &base, &mut std::io::stderr())?;
            let path = dir.join(format!("sweep_{}.csv", kind.name()));
            write(&path, &table.to_csv())?;
            println!("{} rows written to {}", table.rows.len(), path.display());
        }
        Command::Verify { container, stats } => {
            let report = verify(&container, stats.as_deref())?;
            print!("{}", report.render());
            if !report.passed() {
                return Ok(Outcome::Failed);
            }
        }
        Command::Pipeline => {
            let data = load_data(&cfg)?;
            let outcome = run_pipeline(&cfg, &data, &mut std::io::stdout())?;
            if !outcome.breaches.is_empty() {
                return Ok(Outcome::Failed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are errors, not verification failures
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = run(cli);
    let _ = std::io::stdout().flush();
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
