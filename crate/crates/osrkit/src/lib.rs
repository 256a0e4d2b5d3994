pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_with_data};
pub use report::{emit_plot_data, ReportFile};
