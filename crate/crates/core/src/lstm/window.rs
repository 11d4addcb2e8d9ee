use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{LstmError, Result};
use crate::features::FeatureFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    /// Days covered by one window, input days plus the predicted day.
    pub width: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { width: 24, horizon: 1 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 {
            return Err(LstmError::InvalidSpec(format!("width {} < 2", self.width)));
        }
        if self.horizon != 1 {
            return Err(LstmError::InvalidSpec(format!("horizon {} unsupported, only 1", self.horizon)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.width - self.horizon
    }

    pub fn window_count(&self, rows: usize) -> usize {
        (rows + 1).saturating_sub(self.width)
    }
}

/// Sliding windows over a frame. Inputs are stored flat as
/// `[window][step][feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub steps: usize,
    pub n_features: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub start_dates: Vec<NaiveDate>,
    /// Day whose close is the target, i.e. the day after the last input row.
    pub target_dates: Vec<NaiveDate>,
    /// Frame rows each window touches, including the target day's row.
    pub row_spans: Vec<Range<usize>>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self, k: usize) -> &[f64] {
        let sz = self.steps * self.n_features;
        &self.inputs[k * sz..(k + 1) * sz]
    }

    /// Subset of windows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(idx.len() * self.steps * self.n_features);
        for &k in idx {
            inputs.extend_from_slice(self.window(k));
        }
        Self {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            steps: self.steps,
            n_features: self.n_features,
            inputs,
            targets: idx.iter().map(|&k| self.targets[k]).collect(),
            start_dates: idx.iter().map(|&k| self.start_dates[k]).collect(),
            target_dates: idx.iter().map(|&k| self.target_dates[k]).collect(),
            row_spans: idx.iter().map(|&k| self.row_spans[k].clone()).collect(),
        }
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.steps != other.steps || self.feature_names != other.feature_names {
            return Err(LstmError::DatasetMismatch(format!(
                "{} steps x {:?} vs {} steps x {:?}",
                self.steps, self.feature_names, other.steps, other.feature_names
            )));
        }
        Ok(())
    }
}

/// Window `k` reads predictor rows `k..k+steps` and targets the target
/// column of the last input row, which holds the next day's close.
pub fn make_windows(frame: &FeatureFrame, spec: &WindowSpec) -> Result<WindowedDataset> {
    spec.validate()?;
    let rows = frame.n_rows();
    if rows < spec.width {
        return Err(LstmError::TooFewRows { needed: spec.width, got: rows });
    }
    let steps = spec.input_len();
    let predictors = frame.predictor_indices();
    let target_col = frame.target_index();
    let n = spec.window_count(rows);

    let mut inputs = Vec::with_capacity(n * steps * predictors.len());
    let mut targets = Vec::with_capacity(n);
    let mut start_dates = Vec::with_capacity(n);
    let mut target_dates = Vec::with_capacity(n);
    let mut row_spans = Vec::with_capacity(n);
    for k in 0..n {
        for r in k..k + steps {
            let row = frame.row(r);
            inputs.extend(predictors.iter().map(|&c| row[c]));
        }
        let last = k + steps - 1;
        targets.push(frame.get(last, target_col));
        start_dates.push(frame.dates()[k]);
        target_dates.push(frame.dates()[last + spec.horizon]);
        row_spans.push(k..k + spec.width);
    }
    Ok(WindowedDataset {
        feature_names: frame.predictor_names().into_iter().map(String::from).collect(),
        target_name: frame.target_name().to_string(),
        steps,
        n_features: predictors.len(),
        inputs,
        targets,
        start_dates,
        target_dates,
        row_spans,
    })
}
