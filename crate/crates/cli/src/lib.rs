//! Experiment harness around `rcac-core`: builds run grids from flat
//! config files and flags, executes them (optionally as parallel worker
//! processes), and aggregates finished runs into tidy CSV and SVG curves.
//!
//! Runs live under `<out>/<env>/<mode>/seed_<seed>/`.

pub mod aggregate;
pub mod compare;
pub mod experiment;
pub mod orchestrate;
pub mod plot;

use std::path::PathBuf;

pub use experiment::{parse_config, ExperimentSpec, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
    #[error("refusing to overwrite completed runs (pass --force):\n  - {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n  - "))]
    Completed(Vec<PathBuf>),
    #[error("{0}")]
    Aggregate(String),
    #[error("worker for {dir} failed: {status}")]
    Worker { dir: PathBuf, status: String },
    #[error(transparent)]
    Core(#[from] rcac_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
