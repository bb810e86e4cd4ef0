//! Scenario orchestration: configuration, the scan loop, experiment sweeps
//! and their CSV/SVG outputs.

pub mod config;
pub mod experiment;
pub mod output;
pub mod svg;
pub mod world;

use thiserror::Error;

pub use config::{SimConfig, ThresholdMethod};
pub use experiment::{
    run_scenario, worker_pool, Aggregate, Cell, ExperimentResult, ScenarioTrace, Simulator,
    ThresholdComparison,
};
pub use world::World;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Channel(#[from] crate::channel::ChannelError),
    #[error(transparent)]
    Phy(#[from] crate::phy::PhyError),
    #[error(transparent)]
    Detector(#[from] crate::detector::DetectorError),
    #[error(transparent)]
    Feedback(#[from] crate::feedback::FeedbackError),
    #[error(transparent)]
    Optimizer(#[from] crate::optimizer::OptimizerError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. })
    }
}
