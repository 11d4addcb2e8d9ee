use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureFrame, Result};

/// Chronological placement of the three blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockOrder {
    #[default]
    TrainValTest,
    TrainTestVal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub order: BlockOrder,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            validation: 0.1,
            test: 0.2,
            order: BlockOrder::TrainValTest,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(*p > 0.0)) {
            return Err(FeatureError::InvalidSplit("every fraction must be positive".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FeatureError::InvalidSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }

    /// Row ranges `(train, validation, test)` for `n` rows. The first two
    /// blocks in chronological order get `floor(fraction * n)` rows and the
    /// last block takes the remainder.
    pub fn ranges(&self, n: usize) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
        self.validate()?;
        // Guard floor() against products like 0.7 * 10 = 6.999...
        let take = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let ntrain = take(self.train);
        let (train, val, test) = match self.order {
            BlockOrder::TrainValTest => {
                let nval = take(self.validation);
                let v = ntrain..ntrain + nval;
                (0..ntrain, v.clone(), v.end..n)
            }
            BlockOrder::TrainTestVal => {
                let ntest = take(self.test);
                let t = ntrain..ntrain + ntest;
                (0..ntrain, t.end..n, t)
            }
        };
        if n < 3 || train.is_empty() || val.is_empty() || test.is_empty() || test.end > n || val.end > n {
            return Err(FeatureError::TooFewRows { needed: 3, got: n });
        }
        Ok((train, val, test))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: FeatureFrame,
    pub validation: FeatureFrame,
    pub test: FeatureFrame,
    pub train_rows: Range<usize>,
    pub validation_rows: Range<usize>,
    pub test_rows: Range<usize>,
}

pub fn split_chronological(frame: &FeatureFrame, spec: &SplitSpec) -> Result<Splits> {
    let (tr, va, te) = spec.ranges(frame.n_rows())?;
    Ok(Splits {
        train: frame.slice_rows(tr.clone()),
        validation: frame.slice_rows(va.clone()),
        test: frame.slice_rows(te.clone()),
        train_rows: tr,
        validation_rows: va,
        test_rows: te,
    })
}
