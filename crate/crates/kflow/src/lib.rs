//! Experiment runner for the flow library: configuration, scenarios, file formats.

pub mod config;
pub mod error;
pub mod io;
pub mod scenario;
pub mod soliton;
pub mod suite;

pub use config::{ExperimentSpec, ScenarioId};
pub use error::{KflowError, Result};
pub use scenario::{run_scenario, Check, ReportBundle};
