//! Experiment driver: specs, run directories with checkpoints and
//! manifests, resumption, the analysis bundle and benchmarks.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! experiment.cfg            experiment as key = value text
//! manifest.json             every cell, its seed, config hash, status and files
//! runs/<cell>/pop<NN>/      one training run
//!     run.cfg               hashed run configuration plus options
//!     metrics.jsonl         header line, then one line per episode
//!     checkpoint.bin        run checkpoint
//!     status.json           episodes done
//!     events/               sampled event logs (header line, then events)
//!     frames/               optional PPM frames
//! analysis/                 stats.json, report.txt, curves/*.csv
//! ```

mod analysis;
mod bench;
mod spec;
mod store;

pub use analysis::{analyze, curves, export_curves, load_runs, spec_bins, stats_report, write_bundle, Report, RunData, CURVE_CONFIDENCE};
pub use bench::{bench_env, BenchReport};
pub use spec::{
    config_hash, parse_run_file, run_config_text, run_file_text, Cell, ExperimentSpec, Mode, Preset, RunOptions, SweepAxis,
};
pub use store::{
    read_metrics, resume, resume_run, run_experiment, start_run, ArtifactHeader, CellStatus, Control, ExperimentOutcome,
    Manifest, ManifestCell, Resumed, RunOutcome, RunStatus, CHECKPOINT_FILE, EXPERIMENT_FILE, MANIFEST_FILE, METRICS_FILE,
    RUN_FILE, STATUS_FILE,
};

use std::path::PathBuf;

use crate::rollout::RolloutError;

/// Process exit codes of the command-line driver.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
    pub const INCOMPLETE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("refusing to continue: {0}")]
    Refused(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("analysis: {0}")]
    Analysis(String),
    #[error("incomplete: {0}")]
    Incomplete(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Refused(_) => exit_code::CONFIG,
            ExperimentError::Rollout(RolloutError::InvalidConfig(_)) => exit_code::CONFIG,
            ExperimentError::Incomplete(_) => exit_code::INCOMPLETE,
            _ => exit_code::RUNTIME,
        }
    }
}
