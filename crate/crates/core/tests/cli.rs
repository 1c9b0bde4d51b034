mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use tempfile::TempDir;

use weightpress::cli::PipelineConfig;

fn idx_images(n: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        out.extend(d.to_be_bytes());
    }
    out.extend(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

/// Ten classes, each a bright horizontal band at its own height plus noise.
fn write_synthetic_mnist(dir: &Path) {
    let mut rng = common::rng(77);
    for (stem, n) in [("train", 600), ("t10k", 200)] {
        let mut pixels = Vec::with_capacity(n * 784);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 10) as u8;
            for r in 0..28 {
                for _ in 0..28 {
                    let band = r / 3 == label as usize;
                    let base: u8 = if band { 200 } else { 10 };
                    pixels.push(base.saturating_add(rng.random_range(0..40)));
                }
            }
            labels.push(label);
        }
        std::fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), idx_images(n, &pixels)).unwrap();
        std::fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), idx_labels(&labels)).unwrap();
    }
}

struct Sandbox {
    tmp: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir(tmp.path().join("mnist")).unwrap();
        write_synthetic_mnist(&tmp.path().join("mnist"));
        Self { tmp }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.tmp.path().join(rel)
    }

    /// Small, fast config; `extra` is appended verbatim.
    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            "tolerance = 1.0\n{extra}\n[data]\nmnist_dir = {:?}\n[train]\nepochs = 2\n[prune.retrain]\nepochs = 1\n[quantize.finetune]\nepochs = 1\n[bench]\nreps = 3\n",
            self.path("mnist")
        );
        let path = self.path(name);
        std::fs::write(&path, text).unwrap();
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_weightpress"))
            .args(args)
            .current_dir(self.tmp.path())
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn print_config_round_trips_defaults() {
    let sb = Sandbox::new();
    let out = sb.run(&["--print-config"]);
    assert_eq!(code(&out), 0);
    let cfg = PipelineConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn pipeline_is_deterministic_and_resumable() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.toml", "");
    for run in ["a", "b"] {
        let out = sb.run(&["--config", s(&cfg), "--out", run, "pipeline"]);
        assert_eq!(code(&out), 0, "{}", text(&out));
    }
    for file in ["dense.wpdn", "pruned.wpcm", "quantized.wpcm", "huffman.wpcm", "huffman.stats.csv"] {
        assert_eq!(
            std::fs::read(sb.path("a").join(file)).unwrap(),
            std::fs::read(sb.path("b").join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    let resume = sb.config(
        "r.toml",
        &format!("stages = [\"prune\", \"quantize\", \"huffman\"]\n[network]\nresume = {:?}", sb.path("a/dense.wpdn")),
    );
    let out = sb.run(&["--config", s(&resume), "--out", "c", "pipeline"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    for file in ["pruned.wpcm", "quantized.wpcm", "huffman.wpcm"] {
        assert_eq!(
            std::fs::read(sb.path("a").join(file)).unwrap(),
            std::fs::read(sb.path("c").join(file)).unwrap(),
            "{file} differs after resuming"
        );
    }
    let stages = std::fs::read_to_string(sb.path("a/stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 5);
}

#[test]
fn train_only_pipeline() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.toml", "stages = [\"train\"]");
    let out = sb.run(&["--config", s(&cfg), "--out", "t", "pipeline"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(sb.path("t/dense.wpdn").exists());
    assert!(!sb.path("t/pruned.wpcm").exists());
    let stages = std::fs::read_to_string(sb.path("t/stages.csv")).unwrap();
    assert_eq!(stages.lines().count(), 2);
    assert!(stages.lines().nth(1).unwrap().starts_with("train,"));
}

#[test]
fn stage_breach_exits_two() {
    let sb = Sandbox::new();
    let cfg = sb.path("breach.toml");
    std::fs::write(
        &cfg,
        format!(
            "stages = [\"train\", \"prune\"]\ntolerance = 0.0\n[data]\nmnist_dir = {:?}\n[train]\nepochs = 3\n[prune]\ndensities = [0.002, 0.002, 0.002]\n[prune.retrain]\nepochs = 0\n",
            sb.path("mnist")
        ),
    )
    .unwrap();
    let out = sb.run(&["--config", s(&cfg), "--out", "x", "pipeline"]);
    assert_eq!(code(&out), 2, "{}", text(&out));
    assert!(text(&out).contains("BREACH"));
}

#[test]
fn subcommands_chain() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.toml", "");
    let c = s(&cfg);
    for args in [
        vec!["--config", c, "--out", "o", "train"],
        vec!["--config", c, "--out", "o", "prune"],
        vec!["--config", c, "--out", "o", "quantize", "--bits", "4", "--init", "density"],
        vec!["--config", c, "--out", "o", "huffman"],
    ] {
        let out = sb.run(&args);
        assert_eq!(code(&out), 0, "{args:?}: {}", text(&out));
    }
    let out = sb.run(&["--config", c, "eval", "o/huffman.wpcm"]);
    assert_eq!(code(&out), 0);
    assert!(text(&out).contains("test error"));

    let out = sb.run(&["stats", "o/quantized.wpcm", "--csv", "o/table.csv"]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(sb.path("o/table.csv")).unwrap();
    assert!(table.starts_with("Layer,#Weights"));
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().nth(1).unwrap().starts_with("ip1,235200,8.00%,4,"));

    let out = sb.run(&["--config", c, "--out", "o", "bench", "o/huffman.wpcm", "--batch", "1,8"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let bench = std::fs::read_to_string(sb.path("o/bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 1 + 3 * 3 * 2);

    let out = sb.run(&["--config", c, "--out", "o", "quantize", "--unpruned", "--bits", "2"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(code(&sb.run(&["verify", "o/quantized.wpcm"])), 0);
}

#[test]
fn sweep_emits_full_grid() {
    let sb = Sandbox::new();
    let cfg = sb.config("c.toml", "[sweep]\nseeds = [1, 2]\ninit_bits = [2, 3, 4]\n[sweep.finetune]\nepochs = 1");
    let c = s(&cfg);
    assert_eq!(code(&sb.run(&["--config", c, "--out", "o", "train"])), 0);
    assert_eq!(code(&sb.run(&["--config", c, "--out", "o", "prune"])), 0);
    let out = sb.run(&["--config", c, "--out", "o", "sweep", "init_comparison"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let csv = std::fs::read_to_string(sb.path("o/sweep_init_comparison.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "series,setting,seed,accuracy,compression_rate");
    assert_eq!(csv.lines().count(), 1 + 3 * 3 * 2);
    for init in ["forgy", "density", "linear"] {
        assert_eq!(csv.lines().filter(|l| l.starts_with(&format!("{init},"))).count(), 6);
    }
    let again = sb.run(&["--config", c, "--out", "o2", "sweep", "init_comparison", "--dense", "o/dense.wpdn", "--pruned", "o/pruned.wpdn"]);
    assert_eq!(code(&again), 0);
    assert_eq!(csv, std::fs::read_to_string(sb.path("o2/sweep_init_comparison.csv")).unwrap());
}

#[test]
fn verify_exit_codes() {
    let sb = Sandbox::new();
    let model = common::random_model(&mut common::rng(5), 3);
    let path = sb.path("m.wpcm");
    model.save(&path).unwrap();
    let out = sb.run(&["verify", "m.wpcm"]);
    assert_eq!(code(&out), 0, "{}", text(&out));

    let mut bytes = std::fs::read(&path).unwrap();
    let at = bytes.len() / 2;
    bytes[at] ^= 0x10;
    std::fs::write(sb.path("flipped.wpcm"), &bytes).unwrap();
    let out = sb.run(&["verify", "flipped.wpcm"]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("layer") || text(&out).contains("bias"), "{}", text(&out));

    let csv = weightpress::container::compute_stats(&model, 32).unwrap().to_csv();
    std::fs::write(sb.path("m.stats.csv"), &csv).unwrap();
    assert_eq!(code(&sb.run(&["verify", "m.wpcm"])), 0);
    let tampered = csv.replacen(",6,", ",7,", 1).replacen("Total,", "Total,1", 1);
    std::fs::write(sb.path("m.stats.csv"), tampered).unwrap();
    let out = sb.run(&["verify", "m.wpcm"]);
    assert_eq!(code(&out), 2);
    assert!(text(&out).contains("accounting"), "{}", text(&out));

    assert_eq!(code(&sb.run(&["verify", "missing.wpcm"])), 1);
}

#[test]
fn errors_exit_one() {
    let sb = Sandbox::new();
    std::fs::write(sb.path("bad.toml"), "unknown_key = 3\n").unwrap();
    assert_eq!(code(&sb.run(&["--config", "bad.toml", "pipeline"])), 1);
    std::fs::write(sb.path("order.toml"), "stages = [\"quantize\", \"prune\"]\n").unwrap();
    let out = sb.run(&["--config", "order.toml", "pipeline"]);
    assert_eq!(code(&out), 1);
    assert!(text(&out).contains("ordered"));
    assert_eq!(code(&sb.run(&["nonsense"])), 1);
    let out = sb.run(&["--out", "o", "eval", "nothing.wpdn"]);
    assert_eq!(code(&out), 1);
}
