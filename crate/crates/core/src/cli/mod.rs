//! Pipeline orchestration, configuration, sweeps and container verification behind the
//! `weightpress` binary.

pub mod config;
pub mod pipeline;
pub mod sweep;
pub mod verify;

pub use config::{PipelineConfig, StageName};
pub use pipeline::{
    agreement, load_data, pruned_container, quantize_network, run_pipeline, save_container, MnistData, PipelineOutcome,
    QuantizeOutcome, StageResult,
};
pub use sweep::{sweep, SweepBase, SweepKind, SweepRow, SweepSpec, SweepTable};
pub use verify::{sibling_stats, verify, verify_bytes, Check, VerifyReport};
