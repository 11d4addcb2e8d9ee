use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{batch_loss, bptt_gradients, mae, mse_loss, predict, LstmParams};
use super::window::WindowedDataset;
use super::{LstmError, Result};
use crate::features::Normalizer;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 200,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LstmError::InvalidConfig(m));
        if self.hidden_size == 0 {
            return bad("hidden_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) must lie in [0, 1)", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss of the parameters going into this epoch's update.
    pub train_loss: f64,
    /// Loss after the update.
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub format_version: u32,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub steps: usize,
    pub params: LstmParams,
}

impl LstmModel {
    pub fn predict_window(&self, window: &[f64]) -> Result<f64> {
        predict(&self.params, window)
    }

    /// Predictions for every window, in dataset order.
    pub fn predict(&self, dataset: &WindowedDataset) -> Result<Vec<f64>> {
        self.check_dataset(dataset)?;
        (0..dataset.len()).into_par_iter().map(|k| predict(&self.params, dataset.window(k))).collect()
    }

    fn check_dataset(&self, dataset: &WindowedDataset) -> Result<()> {
        if dataset.feature_names != self.feature_names || dataset.steps != self.steps {
            return Err(LstmError::DatasetMismatch(format!(
                "model expects {} steps of {:?}, dataset has {} steps of {:?}",
                self.steps, self.feature_names, dataset.steps, dataset.feature_names
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(LstmError::InvalidConfig(format!("unsupported model format {}", m.format_version)));
        }
        if m.params.input != m.feature_names.len() {
            return Err(LstmError::ShapeMismatch(format!(
                "{} feature names for input size {}",
                m.feature_names.len(),
                m.params.input
            )));
        }
        Ok(m)
    }
}

/// Full-batch Adam with early stopping on validation loss. The returned
/// model holds the best-validation parameters.
pub fn train_lstm(train: &WindowedDataset, val: &WindowedDataset, config: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    train.check_compatible(val)?;

    let mut params = LstmParams::init(config.hidden_size, train.n_features, config.seed);
    let mut flat = params.to_flat();
    let mut state = AdamState::new(flat.len());
    let adam = config.adam();

    let mut best = (params.clone(), f64::INFINITY, 0usize);
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 1..=config.max_epochs {
        let (grads, train_loss) = bptt_gradients(&params, train)?;
        adam_step(&mut flat, &grads.to_flat(), &mut state, &adam, epoch as u64);
        params.set_flat(&flat);
        let val_loss = match batch_loss(&params, val) {
            Ok(v) => v,
            Err(LstmError::NonFiniteActivation(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(LstmError::DivergedLoss { epoch, train_loss, val_loss });
        }
        epochs.push(EpochRecord { epoch, train_loss, val_loss });
        if val_loss < best.1 {
            best = (params.clone(), val_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let stopped_epoch = epochs.len();
    log::debug!("lstm stopped at epoch {stopped_epoch}, best {} at {}", best.1, best.2);
    let model = LstmModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        feature_names: train.feature_names.clone(),
        steps: train.steps,
        params: best.0,
    };
    let report = TrainReport { epochs, best_epoch: best.2, best_val_loss: best.1, stopped_epoch, stop_reason };
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastMetrics {
    pub mae_normalized: f64,
    pub loss_normalized: f64,
    pub mae_price_units: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: ForecastMetrics,
    pub predictions: Vec<f64>,
}

/// Score normalized predictions, and in price units via the target
/// column's stored normalization.
pub fn evaluate_predictions(predictions: &[f64], targets: &[f64], target_name: &str, normalizer: &Normalizer) -> Result<ForecastMetrics> {
    let mae_normalized = mae(predictions, targets)?;
    let loss_normalized = mse_loss(predictions, targets)?;
    let denorm = |v: &[f64]| -> Result<Vec<f64>> {
        v.iter().map(|&z| normalizer.denormalize(target_name, z).map_err(LstmError::from)).collect()
    };
    let mae_price_units = mae(&denorm(predictions)?, &denorm(targets)?)?;
    Ok(ForecastMetrics { mae_normalized, loss_normalized, mae_price_units })
}

pub fn evaluate_forecaster(model: &LstmModel, dataset: &WindowedDataset, normalizer: &Normalizer) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    let predictions = model.predict(dataset)?;
    let metrics = evaluate_predictions(&predictions, &dataset.targets, &dataset.target_name, normalizer)?;
    Ok(Evaluation { metrics, predictions })
}
