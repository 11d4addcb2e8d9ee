//! Config loading, experiment orchestration and report emission.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ConfigError, DataConfig, FeatureMode, FetchConfig, RunConfig};
pub use experiment::{
    build_features, run_ablation, run_ablation_on_frame, run_experiment, run_experiment_on_frame, AblationReport,
    ExperimentResult, PredictionRow,
};
pub use report::{emit_ablation, emit_experiment, read_predictions_csv, render_svg, write_atomic, AblationMetricsFile, ArmSummary, ExperimentMetricsFile, SvgUnits, METRICS_FORMAT_VERSION};

use crate::features::FeatureError;
use crate::ingest::{FetchError, IngestError};
use crate::lstm::LstmError;
use crate::select::SelectError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Fetch,
    Ingest,
    Features,
    Selection,
    Windowing,
    Training,
    Evaluation,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Fetch => "fetch",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Selection => "selection",
            Stage::Windowing => "windowing",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Cause {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {cause}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub cause: Cause,
}

impl PipelineError {
    pub fn new(stage: Stage, cause: impl Into<Cause>) -> Self {
        Self { stage, cause: cause.into() }
    }

    /// 1 for usage or config problems, 2 for bad or missing data,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use crate::forest::ForestError;
        match &self.cause {
            Cause::Config(_) => 1,
            Cause::Fetch(_) | Cause::Ingest(_) | Cause::Io(_) | Cause::Json(_) | Cause::Csv(_) | Cause::Data(_) => 2,
            Cause::Feature(FeatureError::Stats(_)) => 3,
            Cause::Feature(FeatureError::InvalidSplit(_) | FeatureError::WindowTooSmall(_)) => 1,
            Cause::Feature(_) => 2,
            Cause::Select(SelectError::InvalidConfig(_)) => 1,
            Cause::Select(SelectError::UnknownFeatureName(_)) => 2,
            Cause::Select(SelectError::Forest(ForestError::InvalidConfig(_))) => 1,
            Cause::Select(SelectError::Forest(ForestError::EmptyDataset)) => 2,
            Cause::Select(_) => 3,
            Cause::Lstm(LstmError::InvalidConfig(_) | LstmError::InvalidSpec(_)) => 1,
            Cause::Lstm(LstmError::DivergedLoss { .. } | LstmError::NonFiniteActivation(_)) => 3,
            Cause::Lstm(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<Cause>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}
