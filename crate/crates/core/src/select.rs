//! Two-stage feature selection: top-k forest importance unioned with
//! Pearson screening against the target.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureFrame;
use crate::forest::{self, DataMatrix, ForestConfig, ForestError};
use crate::stats::{self, StatsError};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("unknown feature {0}")]
    UnknownFeatureName(String),
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type Result<T> = std::result::Result<T, SelectError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectConfig {
    pub rf_top_k: usize,
    pub r_min: f64,
    pub p_max: f64,
    /// Screen on `r > r_min` instead of `|r| > r_min`.
    pub signed_r: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { rf_top_k: 7, r_min: 0.6, p_max: 0.05, signed_r: false }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < 1.0) {
            return Err(SelectError::InvalidConfig(format!("r_min {} outside (0, 1)", self.r_min)));
        }
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(SelectError::InvalidConfig(format!("p_max {} outside (0, 1)", self.p_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonHit {
    pub name: String,
    pub r: f64,
    pub p: f64,
}

/// Top `rf_top_k` predictors by forest importance. The target column is
/// never a candidate.
pub fn rf_select(frame: &FeatureFrame, config: &SelectConfig, forest_config: &ForestConfig) -> Result<Vec<RankedFeature>> {
    config.validate()?;
    if config.rf_top_k == 0 {
        return Ok(Vec::new());
    }
    let predictors = frame.predictor_indices();
    let mut data = Vec::with_capacity(frame.n_rows() * predictors.len());
    for r in 0..frame.n_rows() {
        data.extend(predictors.iter().map(|&c| frame.get(r, c)));
    }
    let x = DataMatrix::new(frame.n_rows(), predictors.len(), data)?;
    let model = forest::fit_forest(&x, &frame.target_values(), forest_config)?;
    let report = forest::feature_importance(&model)?;
    // ranking already breaks ties by index, i.e. by original column order
    Ok(report
        .ranking
        .iter()
        .take(config.rf_top_k)
        .map(|&i| RankedFeature {
            name: frame.column_names()[predictors[i]].clone(),
            importance: report.importances[i],
        })
        .collect())
}

/// Predictors with `|r| > r_min` (or `r > r_min` when signed) and
/// `p < p_max`, in column order. Constant columns are skipped.
pub fn pearson_select(frame: &FeatureFrame, config: &SelectConfig) -> Result<Vec<PearsonHit>> {
    config.validate()?;
    let target = frame.target_values();
    let mut hits = Vec::new();
    for c in frame.predictor_indices() {
        let name = &frame.column_names()[c];
        let r = match stats::pearson_r(&frame.column(c), &target) {
            Ok(r) => r,
            Err(StatsError::ZeroVariance) => {
                log::warn!("{name}: constant column skipped in correlation screening");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let p = stats::pearson_p_two_sided(r, frame.n_rows())?;
        let strength = if config.signed_r { r } else { r.abs() };
        if strength > config.r_min && p < config.p_max {
            hits.push(PearsonHit { name: name.clone(), r, p });
        }
    }
    Ok(hits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Rf,
    Pearson,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub name: String,
    pub provenance: Provenance,
    pub importance: Option<f64>,
    pub r: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rf_selected: Vec<RankedFeature>,
    pub pearson_selected: Vec<PearsonHit>,
    /// Union of both stages, in original column order.
    pub final_set: Vec<SelectedFeature>,
    pub rf_only: usize,
    pub pearson_only: usize,
    pub both: usize,
}

impl SelectionReport {
    pub fn feature_names(&self) -> Vec<String> {
        self.final_set.iter().map(|f| f.name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("selection report serializes")
    }
}

/// Deduplicated union ordered by `column_order`.
pub fn final_feature_set(
    column_order: &[String],
    rf_selected: &[RankedFeature],
    pearson_selected: &[PearsonHit],
) -> Result<SelectionReport> {
    let known = |n: &str| -> Result<()> {
        if column_order.iter().any(|c| c == n) {
            Ok(())
        } else {
            Err(SelectError::UnknownFeatureName(n.to_string()))
        }
    };
    for n in rf_selected.iter().map(|f| &f.name).chain(pearson_selected.iter().map(|h| &h.name)) {
        known(n)?;
    }

    let mut final_set = Vec::new();
    for col in column_order {
        let rf = rf_selected.iter().find(|f| &f.name == col);
        let pe = pearson_selected.iter().find(|h| &h.name == col);
        let provenance = match (rf, pe) {
            (Some(_), Some(_)) => Provenance::Both,
            (Some(_), None) => Provenance::Rf,
            (None, Some(_)) => Provenance::Pearson,
            (None, None) => continue,
        };
        final_set.push(SelectedFeature {
            name: col.clone(),
            provenance,
            importance: rf.map(|f| f.importance),
            r: pe.map(|h| h.r),
            p: pe.map(|h| h.p),
        });
    }
    let count = |p: Provenance| final_set.iter().filter(|f| f.provenance == p).count();
    Ok(SelectionReport {
        rf_selected: rf_selected.to_vec(),
        pearson_selected: pearson_selected.to_vec(),
        rf_only: count(Provenance::Rf),
        pearson_only: count(Provenance::Pearson),
        both: count(Provenance::Both),
        final_set,
    })
}

/// Run both stages on `frame` and merge them.
pub fn select_features(
    frame: &FeatureFrame,
    config: &SelectConfig,
    forest_config: &ForestConfig,
) -> Result<SelectionReport> {
    let rf = rf_select(frame, config, forest_config)?;
    let pearson = pearson_select(frame, config)?;
    final_feature_set(frame.column_names(), &rf, &pearson)
}

impl fmt::Display for SelectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let width = self.final_set.iter().map(|s| s.name.len()).max().unwrap_or(7).max(7);
        writeln!(f, "{:<width$}  {:>10}  {:>8}  {:>10}  source", "feature", "importance", "r", "p")?;
        for s in &self.final_set {
            let tag = match s.provenance {
                Provenance::Rf => "rf",
                Provenance::Pearson => "pearson",
                Provenance::Both => "both",
            };
            writeln!(
                f,
                "{:<width$}  {:>10}  {:>8}  {:>10}  {tag}",
                s.name,
                opt(s.importance, 4),
                opt(s.r, 4),
                s.p.map_or("-".to_string(), |p| format!("{p:.2e}")),
            )?;
        }
        write!(
            f,
            "{} features ({} rf, {} pearson, {} both)",
            self.final_set.len(),
            self.rf_only,
            self.pearson_only,
            self.both
        )
    }
}
