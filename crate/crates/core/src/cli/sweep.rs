use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate, Dataset, Network, TrainConfig};
use crate::prune::{prune_and_retrain, PruneConfig};
use crate::quant::{InitMethod, QuantConfig};

use super::config::SweepConfig;
use super::pipeline::{pruned_container, quantize_network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    BitsVsAccuracy,
    RateVsAccuracy,
    InitComparison,
}

impl SweepKind {
    pub const ALL: [SweepKind; 3] = [SweepKind::BitsVsAccuracy, SweepKind::RateVsAccuracy, SweepKind::InitComparison];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::BitsVsAccuracy => "bits_vs_accuracy",
            SweepKind::RateVsAccuracy => "rate_vs_accuracy",
            SweepKind::InitComparison => "init_comparison",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep kind '{s}'")))
    }
}

/// Grid for one sweep. Every kind runs each cell once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub bits: Vec<u8>,
    pub init_bits: Vec<u8>,
    pub density_scales: Vec<f64>,
    pub combined_bits: Vec<u8>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn from_config(kind: SweepKind, cfg: &SweepConfig) -> Self {
        Self {
            kind,
            bits: cfg.bits.clone(),
            init_bits: cfg.init_bits.clone(),
            density_scales: cfg.density_scales.clone(),
            combined_bits: cfg.combined_bits.clone(),
            seeds: cfg.seeds.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |what: &str| Err(Error::Config(format!("{} sweep needs a nonempty {what} grid", self.kind.name())));
        if self.seeds.is_empty() {
            return empty("seed");
        }
        match self.kind {
            SweepKind::BitsVsAccuracy if self.bits.is_empty() => empty("bits"),
            SweepKind::InitComparison if self.init_bits.is_empty() => empty("init_bits"),
            SweepKind::RateVsAccuracy if self.bits.is_empty() || self.density_scales.is_empty() || self.combined_bits.is_empty() => {
                empty("bits, density_scales and combined_bits")
            }
            _ => Ok(()),
        }
    }
}

/// Shared inputs: the dense and pruned base networks and the stage settings.
#[derive(Debug, Clone, Copy)]
pub struct SweepBase<'a> {
    pub dense: &'a Network,
    pub pruned: &'a Network,
    pub densities: &'a [f64],
    pub index_bits: u8,
    pub quant: &'a QuantConfig,
    pub retrain: &'a TrainConfig,
    pub finetune: &'a TrainConfig,
    pub train: &'a Dataset,
    pub finetune_data: &'a Dataset,
    pub test: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub series: String,
    pub setting: String,
    pub seed: u64,
    pub error: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,setting,seed,accuracy,compression_rate\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{:.6},{:.4}", r.series, r.setting, r.seed, 1.0 - r.error, r.rate);
        }
        s
    }

    pub fn series<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.series == name)
    }

    /// Highest compression rate in a series among cells with error at most `max_error`.
    pub fn best_rate_within(&self, series: &str, max_error: f64) -> Option<f64> {
        self.series(series)
            .filter(|r| r.error <= max_error)
            .map(|r| r.rate)
            .max_by(f64::total_cmp)
    }

    pub fn find(&self, series: &str, setting: &str, seed: u64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.series == series && r.setting == setting && r.seed == seed)
    }
}

fn original_bits(net: &Network) -> f64 {
    (net.weight_count() + net.layers().iter().map(|l| l.bias.len()).sum::<usize>()) as f64 * 32.0
}

fn quantized_cell(
    base: &SweepBase<'_>,
    pruned: bool,
    net: &Network,
    bits: u8,
    init: InitMethod,
    seed: u64,
) -> Result<(f64, f64)> {
    let cfg = QuantConfig {
        bits,
        init,
        seed,
        ..base.quant.clone()
    };
    let finetune = TrainConfig {
        seed,
        ..base.finetune.clone()
    };
    let out = quantize_network(net, pruned, base.index_bits, |_| cfg.clone(), &finetune, base.finetune_data)?;
    let bytes = out.model.to_bytes()?.len();
    Ok((evaluate(&out.network, base.test)?, original_bits(net) / (bytes as f64 * 8.0)))
}

/// Runs every cell of the grid. Quantized cells are fine-tuned on `finetune_data`;
/// rates are original 32-bit size over serialized container size.
pub fn sweep(spec: &SweepSpec, base: &SweepBase<'_>, log: &mut dyn Write) -> Result<SweepTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut push = |series: &str, setting: String, seed: u64, (error, rate): (f64, f64)| {
        let _ = writeln!(log, "{series:<12} {setting:<18} seed {seed:<4} error {:.2}%  rate {rate:.1}x", error * 100.0);
        rows.push(SweepRow {
            series: series.into(),
            setting,
            seed,
            error,
            rate,
        });
    };
    for &seed in &spec.seeds {
        match spec.kind {
            SweepKind::BitsVsAccuracy => {
                for &bits in &spec.bits {
                    for (series, pruned, net) in [("unpruned", false, base.dense), ("pruned", true, base.pruned)] {
                        let cell = quantized_cell(base, pruned, net, bits, base.quant.init, seed)?;
                        push(series, format!("bits={bits}"), seed, cell);
                    }
                }
            }
            SweepKind::InitComparison => {
                for init in InitMethod::ALL {
                    for &bits in &spec.init_bits {
                        let cell = quantized_cell(base, true, base.pruned, bits, init, seed)?;
                        push(init.name(), format!("bits={bits}"), seed, cell);
                    }
                }
            }
            SweepKind::RateVsAccuracy => {
                for &bits in &spec.bits {
                    let cell = quantized_cell(base, false, base.dense, bits, base.quant.init, seed)?;
                    push("quantization", format!("bits={bits}"), seed, cell);
                }
                for &scale in &spec.density_scales {
                    let cfg = PruneConfig {
                        densities: base.densities.iter().map(|d| (d * scale).min(1.0)).collect(),
                        index_bits: base.index_bits,
                        retrain: TrainConfig {
                            seed,
                            ..base.retrain.clone()
                        },
                    };
                    let pruned = prune_and_retrain(base.dense.clone(), base.train, &cfg)?.network;
                    let bytes = pruned_container(&pruned, base.index_bits)?.to_bytes()?.len();
                    let rate = original_bits(&pruned) / (bytes as f64 * 8.0);
                    push("pruning", format!("scale={scale}"), seed, (evaluate(&pruned, base.test)?, rate));
                    for &bits in &spec.combined_bits {
                        let cell = quantized_cell(base, true, &pruned, bits, base.quant.init, seed)?;
                        push("combined", format!("scale={scale}/bits={bits}"), seed, cell);
                    }
                }
            }
        }
    }
    Ok(SweepTable { kind: spec.kind, rows })
}
