//! Experiment orchestration: configuration, seed fan-out, and the command
//! implementations behind the `mldgseg` binary.
//!
//! Every command reads its inputs from the manifest or a checkpoint and
//! writes only under the configured output directory:
//!
//! ```text
//! <out>/data/manifest.toml            synth
//! <out>/<run>/checkpoint.mckpt        train, finetune
//! <out>/<run>/predictions/*.mvol      predict
//! <out>/<run>/metrics.csv             evaluate
//! <out>/report_summary.csv            stats
//! <out>/lodo/<target>/...             sweep
//! ```

mod commands;
mod config;

pub use commands::*;
pub use config::{derive_seed, ExperimentConfig, Procedure};
