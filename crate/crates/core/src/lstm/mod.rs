//! Single-layer LSTM forecaster trained with full-batch Adam.

use thiserror::Error;

pub mod adam;
pub mod gradcheck;
pub mod model;
pub mod train;
pub mod window;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradient_check, gradient_check_with, gradcheck_problem, GradCheckConfig};
pub use model::{batch_loss, bptt_gradients, lstm_forward, mae, mse_loss, predict, ForwardCache, LstmParams};
pub use train::{
    evaluate_forecaster, evaluate_predictions, train_lstm, EpochRecord, Evaluation, ForecastMetrics, LstmModel,
    StopReason, TrainConfig, TrainReport, MODEL_FORMAT_VERSION,
};
pub use window::{make_windows, WindowSpec, WindowedDataset};

use crate::features::FeatureError;

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("need at least {needed} rows for one window, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation: {0}")]
    NonFiniteActivation(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("loss diverged at epoch {epoch} (train {train_loss}, validation {val_loss})")]
    DivergedLoss { epoch: usize, train_loss: f64, val_loss: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LstmError>;
