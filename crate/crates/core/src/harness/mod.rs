//! Experiment harness behind the command-line front end: flat run
//! configurations, the commands themselves, and reproducible manifests.

mod commands;
mod config;
mod manifest;
mod stats;

pub use commands::{load_classifier, run, stripe_runs, sweep_records, Command, SweepRecord};
pub use config::{RunConfig, ShiftMode, SweepAxis, SweepMode};
pub use manifest::{file_digest, sha256_hex, Manifest, MANIFEST_FILE, TOOL_VERSION};
pub use stats::{average_ranks, spearman};
