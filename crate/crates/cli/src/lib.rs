//! Command-line pipeline: synthesize or load data, cluster sites into
//! archetypes, train global and expert forecasters, and evaluate them on
//! held-out sites.
//!
//! Every command reads one JSON config, writes its artifacts atomically and
//! finishes with a `manifest.json` that hashes everything it wrote.

pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_predict, cmd_run, cmd_sweep, cmd_synth, Prediction, RunOutput, SweepOutput, SynthOutput};
pub use config::{ClusteringConfig, LoadedConfig, Overrides, PipelineConfig};
pub use error::CliError;
