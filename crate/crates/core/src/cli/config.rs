use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainConfig;
use crate::prune::PruneConfig;
use crate::quant::QuantConfig;

/// Pipeline stages in their mandatory order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Train,
    Prune,
    Quantize,
    Huffman,
}

impl StageName {
    pub const ALL: [StageName; 4] = [StageName::Train, StageName::Prune, StageName::Quantize, StageName::Huffman];

    pub fn name(self) -> &'static str {
        match self {
            StageName::Train => "train",
            StageName::Prune => "prune",
            StageName::Quantize => "quantize",
            StageName::Huffman => "huffman",
        }
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files.
    pub mnist_dir: PathBuf,
    /// Use only the first N training samples (0 = all).
    pub train_limit: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: PathBuf::from("data/mnist"),
            train_limit: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub dims: Vec<usize>,
    pub seed: u64,
    /// Start from this dense model instead of training.
    pub resume: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            dims: vec![784, 300, 100, 10],
            seed: 42,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    /// Quantization widths for `bits_vs_accuracy` and the quantized series of `rate_vs_accuracy`.
    pub bits: Vec<u8>,
    /// Widths compared in `init_comparison`.
    pub init_bits: Vec<u8>,
    /// Multipliers applied to the per-layer pruning densities in `rate_vs_accuracy`.
    pub density_scales: Vec<f64>,
    /// Widths combined with each pruned network in `rate_vs_accuracy`.
    pub combined_bits: Vec<u8>,
    /// Retraining for the pruning-only series.
    pub retrain: TrainConfig,
    /// Centroid fine-tuning per cell; runs on the first `finetune_samples` training samples.
    pub finetune: TrainConfig,
    pub finetune_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            bits: (1..=8).collect(),
            init_bits: (2..=8).collect(),
            density_scales: vec![3.0, 2.0, 1.5, 1.0, 0.75, 0.5],
            combined_bits: vec![3, 4, 5, 6],
            retrain: TrainConfig {
                epochs: 3,
                learning_rate: 0.02,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 1,
                ..QuantConfig::default().finetune
            },
            finetune_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 64],
            reps: 15,
            seed: 0,
        }
    }
}

/// Everything a run needs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<StageName>,
    /// Per-layer quantization widths overriding `quantize.bits` (empty = use it everywhere).
    pub layer_bits: Vec<u8>,
    /// Allowed test-error increase per stage, as a fraction.
    pub tolerance: f64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
    pub quantize: QuantConfig,
    pub sweep: SweepConfig,
    pub bench: BenchConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: StageName::ALL.to_vec(),
            layer_bits: Vec::new(),
            tolerance: 0.003,
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            prune: PruneConfig::default(),
            quantize: QuantConfig::default(),
            sweep: SweepConfig::default(),
            bench: BenchConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// Derives every seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.network.seed = seed;
        self.train.seed = seed;
        self.prune.retrain.seed = seed.wrapping_add(1);
        self.quantize.seed = seed.wrapping_add(2);
        self.quantize.finetune.seed = seed.wrapping_add(3);
        self.bench.seed = seed;
        self
    }

    pub fn has(&self, stage: StageName) -> bool {
        self.stages.contains(&stage)
    }

    /// Quantization settings for layer `i`.
    pub fn quant_for(&self, i: usize) -> QuantConfig {
        let mut q = self.quantize.clone();
        if let Some(&b) = self.layer_bits.get(i) {
            q.bits = b;
        }
        q
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("no stages selected".into());
        }
        if self.stages.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "stages must be distinct and ordered train, prune, quantize, huffman; got {:?}",
                self.stages.iter().map(|s| s.name()).collect::<Vec<_>>()
            ));
        }
        if self.has(StageName::Huffman) && !self.has(StageName::Quantize) {
            return bad("huffman coding needs the quantize stage".into());
        }
        if !self.has(StageName::Train) && self.network.resume.is_none() {
            return bad("without the train stage, network.resume must name a dense model".into());
        }
        if self.network.dims.len() < 2 || self.network.dims.contains(&0) {
            return bad(format!("invalid network dims {:?}", self.network.dims));
        }
        let layers = self.network.dims.len() - 1;
        if self.prune.densities.len() != layers {
            return bad(format!("{} pruning densities for {layers} layers", self.prune.densities.len()));
        }
        if !self.layer_bits.is_empty() && self.layer_bits.len() != layers {
            return bad(format!("{} layer_bits entries for {layers} layers", self.layer_bits.len()));
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative".into());
        }
        for t in [&self.train, &self.prune.retrain, &self.quantize.finetune, &self.sweep.retrain, &self.sweep.finetune] {
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for i in 0..layers {
            self.quant_for(i).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.bench.reps < 3 {
            return bad("bench.reps must be at least 3".into());
        }
        Ok(())
    }
}
