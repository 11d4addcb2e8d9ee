use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureFrame, Result};

/// Per-column z-score parameters fitted on a row range (the training split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    /// Sample standard deviations (`n - 1`), all strictly positive.
    pub stds: Vec<f64>,
}

pub fn fit_normalizer(frame: &FeatureFrame, rows: Range<usize>) -> Result<Normalizer> {
    if rows.is_empty() || rows.end > frame.n_rows() {
        return Err(FeatureError::TooFewRows {
            needed: 1,
            got: rows.len(),
        });
    }
    let n = rows.len() as f64;
    let mut means = Vec::with_capacity(frame.n_cols());
    let mut stds = Vec::with_capacity(frame.n_cols());
    for (c, name) in frame.column_names().iter().enumerate() {
        let mean = rows.clone().map(|r| frame.get(r, c)).sum::<f64>() / n;
        let ss: f64 = rows
            .clone()
            .map(|r| {
                let d = frame.get(r, c) - mean;
                d * d
            })
            .sum();
        let std = if rows.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        if !(std > f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE)) {
            return Err(FeatureError::ZeroVarianceColumn(name.clone()));
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(Normalizer {
        columns: frame.column_names().to_vec(),
        means,
        stds,
    })
}

impl Normalizer {
    fn check(&self, frame: &FeatureFrame) -> Result<()> {
        if frame.column_names() != self.columns.as_slice() {
            return Err(FeatureError::ColumnMismatch);
        }
        Ok(())
    }

    pub fn apply(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.check(frame)?;
        Ok(frame.map_cells(|c, v| (v - self.means[c]) / self.stds[c]))
    }

    pub fn invert(&self, frame: &FeatureFrame) -> Result<FeatureFrame> {
        self.check(frame)?;
        Ok(frame.map_cells(|c, z| z * self.stds[c] + self.means[c]))
    }

    /// `(mean, std)` of one column.
    pub fn params(&self, column: &str) -> Result<(f64, f64)> {
        let i = self
            .columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| FeatureError::UnknownColumn(column.to_string()))?;
        Ok((self.means[i], self.stds[i]))
    }

    pub fn denormalize(&self, column: &str, z: f64) -> Result<f64> {
        let (mean, std) = self.params(column)?;
        Ok(z * std + mean)
    }
}

pub fn apply_normalizer(normalizer: &Normalizer, frame: &FeatureFrame) -> Result<FeatureFrame> {
    normalizer.apply(frame)
}
