//! Configuration, orchestration, file formats and plotting data for the
//! small-ball exit experiments built on [`exitlab_core`].

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::LabError;
pub use output::RunManifest;
pub use plot::emit_plot_data;
pub use runner::{run, RunOutcome};
