//! Random-forest regression: bagged CART trees grown by variance reduction,
//! impurity-based feature importance, and regression metrics.
//!
//! Training rows are put into a canonical order (lexicographic on features,
//! then target) before anything else happens, so the fitted model does not
//! depend on input row order. Per-tree randomness comes from a ChaCha stream
//! keyed by `(master_seed, tree_index)`, which keeps parallel training
//! bit-identical to sequential training.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("forest contains no splits; importances are all zero")]
    NoSplits,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ForestError>;

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DataMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ForestError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(ForestError::DimensionMismatch { expected: cols, got: bad.len() });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(p / 3)`, the usual regression default.
    Third,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, p: usize) -> usize {
        match self {
            Self::Third => p.div_ceil(3),
            Self::All => p,
            Self::Count(k) => k.min(p),
        }
        .max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub master_seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Third,
            bootstrap: true,
            master_seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(ForestError::InvalidConfig("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        /// `n_node · Δ`, the weighted variance reduction of this split.
        impurity_decrease: f64,
    },
    Leaf {
        prediction: f64,
        sample_count: usize,
    },
}

/// Arena-allocated tree; `nodes[0]` is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(ForestError::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { prediction, .. } => return Ok(*prediction),
                TreeNode::Internal { feature, threshold, left, right, .. } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn split_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Internal { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub config: ForestConfig,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Training data in canonical row order.
struct Canonical {
    x: DataMatrix,
    y: Vec<f64>,
}

fn canonicalize(x: &DataMatrix, y: &[f64]) -> Result<Canonical> {
    if x.rows() == 0 {
        return Err(ForestError::EmptyDataset);
    }
    if x.rows() != y.len() {
        return Err(ForestError::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if x.data.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ForestError::NonFinite);
    }
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
    });
    let mut data = Vec::with_capacity(x.data.len());
    for &r in &order {
        data.extend_from_slice(x.row(r));
    }
    Ok(Canonical {
        x: DataMatrix::new(x.rows(), x.cols(), data)?,
        y: order.iter().map(|&r| y[r]).collect(),
    })
}

/// RNG for tree `index` of a forest seeded with `seed`.
fn tree_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    /// Position in the feature-sorted sample where the right side starts.
    cut: usize,
    gain: f64,
}

struct Grower<'a> {
    data: &'a Canonical,
    config: &'a ForestConfig,
    k_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf(&mut self, sample: &[usize]) -> usize {
        let prediction = sample.iter().map(|&i| self.data.y[i]).sum::<f64>() / sample.len() as f64;
        self.nodes.push(TreeNode::Leaf { prediction, sample_count: sample.len() });
        self.nodes.len() - 1
    }

    fn grow(&mut self, sample: Vec<usize>, depth: usize) -> usize {
        let n = sample.len();
        let y0 = self.data.y[sample[0]];
        let pure = sample.iter().all(|&i| self.data.y[i] == y0);
        let depth_capped = self.config.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * self.config.min_samples_leaf {
            return self.leaf(&sample);
        }
        let Some(split) = self.find_split(&sample) else {
            return self.leaf(&sample);
        };

        let mut sorted = sample;
        sort_by_feature(&mut sorted, &self.data.x, split.feature);
        let right_sample = sorted.split_off(split.cut);
        let left_sample = sorted;

        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { prediction: 0.0, sample_count: 0 });
        let left = self.grow(left_sample, depth + 1);
        let right = self.grow(right_sample, depth + 1);
        self.nodes[slot] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            samples: n,
            impurity_decrease: split.gain,
        };
        slot
    }

    fn find_split(&mut self, sample: &[usize]) -> Option<Split> {
        let p = self.data.x.cols();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(&mut self.rng);

        let n = sample.len() as f64;
        let mean = sample.iter().map(|&i| self.data.y[i]).sum::<f64>() / n;
        let parent_sse: f64 = sample.iter().map(|&i| (self.data.y[i] - mean).powi(2)).sum();
        let tol = 1e-12 * parent_sse;

        let mut best: Option<Split> = None;
        let mut buf = sample.to_vec();
        for (visited, &f) in features.iter().enumerate() {
            // Past the sampled subset, keep drawing features only until one
            // yields a valid split.
            if visited >= self.k_features && best.is_some() {
                break;
            }
            sort_by_feature(&mut buf, &self.data.x, f);
            if let Some(cand) = best_cut(&buf, self.data, f, mean, parent_sse, self.config.min_samples_leaf) {
                best = Some(match best {
                    None => cand,
                    Some(b) if prefer(&cand, &b, tol) => cand,
                    Some(b) => b,
                });
            }
        }
        best.filter(|s| s.gain > 0.0)
    }
}

/// True if `a` should replace the incumbent `b`: strictly larger gain, or an
/// equal gain (within `tol`) on a lower feature index or lower threshold.
fn prefer(a: &Split, b: &Split, tol: f64) -> bool {
    if a.gain > b.gain + tol {
        return true;
    }
    if (a.gain - b.gain).abs() <= tol {
        return a.feature.cmp(&b.feature).then(a.threshold.total_cmp(&b.threshold)).is_lt();
    }
    false
}

fn sort_by_feature(sample: &mut [usize], x: &DataMatrix, f: usize) {
    sample.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
}

/// Best cut along feature `f` for a sample already sorted by that feature.
fn best_cut(
    sorted: &[usize],
    data: &Canonical,
    f: usize,
    mean: f64,
    parent_sse: f64,
    min_leaf: usize,
) -> Option<Split> {
    let n = sorted.len();
    let (total_s, total_s2) = sorted.iter().fold((0.0, 0.0), |(s, s2), &i| {
        let d = data.y[i] - mean;
        (s + d, s2 + d * d)
    });
    let tol = 1e-12 * parent_sse;
    let (mut s, mut s2) = (0.0, 0.0);
    let mut best: Option<Split> = None;
    for cut in 1..n {
        let d = data.y[sorted[cut - 1]] - mean;
        s += d;
        s2 += d * d;
        let lo = data.x.get(sorted[cut - 1], f);
        let hi = data.x.get(sorted[cut], f);
        if lo == hi || cut < min_leaf || n - cut < min_leaf {
            continue;
        }
        let nl = cut as f64;
        let nr = (n - cut) as f64;
        let sse_l = s2 - s * s / nl;
        let sse_r = (total_s2 - s2) - (total_s - s) * (total_s - s) / nr;
        let gain = parent_sse - sse_l - sse_r;
        let mut threshold = 0.5 * (lo + hi);
        if threshold >= hi {
            threshold = lo;
        }
        let cand = Split { feature: f, threshold, cut, gain };
        if best.as_ref().is_none_or(|b| cand.gain > b.gain + tol) {
            best = Some(cand);
        }
    }
    best
}

fn grow_tree(data: &Canonical, sample: Vec<usize>, config: &ForestConfig, rng: ChaCha8Rng) -> Tree {
    let mut grower = Grower {
        data,
        config,
        k_features: config.max_features.resolve(data.x.cols()),
        rng,
        nodes: Vec::new(),
    };
    grower.grow(sample, 0);
    Tree { n_features: data.x.cols(), nodes: grower.nodes }
}

/// Fit one CART tree on all rows (no resampling).
pub fn fit_tree(x: &DataMatrix, y: &[f64], config: &ForestConfig, rng_seed: u64) -> Result<Tree> {
    config.validate()?;
    let data = canonicalize(x, y)?;
    let sample = (0..data.y.len()).collect();
    Ok(grow_tree(&data, sample, config, tree_rng(rng_seed, 0)))
}

pub fn fit_forest(x: &DataMatrix, y: &[f64], config: &ForestConfig) -> Result<ForestModel> {
    config.validate()?;
    let data = canonicalize(x, y)?;
    let n = data.y.len();
    let trees = (0..config.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.master_seed, t);
            let sample: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(&data, sample, config, rng)
        })
        .collect();
    Ok(ForestModel {
        format_version: FOREST_FORMAT_VERSION,
        config: config.clone(),
        n_features: x.cols(),
        trees,
    })
}

pub fn forest_predict(model: &ForestModel, x: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for tree in &model.trees {
        sum += tree.predict(x)?;
    }
    Ok(sum / model.trees.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Normalized total impurity decrease per feature; sums to 1.
    pub importances: Vec<f64>,
    /// Feature indices by descending importance, ties by index.
    pub ranking: Vec<usize>,
}

pub fn feature_importance(model: &ForestModel) -> Result<ImportanceReport> {
    let mut totals = vec![0.0; model.n_features];
    for tree in &model.trees {
        for node in &tree.nodes {
            if let TreeNode::Internal { feature, impurity_decrease, .. } = node {
                totals[*feature] += impurity_decrease;
            }
        }
    }
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) {
        return Err(ForestError::NoSplits);
    }
    let importances: Vec<f64> = totals.iter().map(|t| t / sum).collect();
    let mut ranking: Vec<usize> = (0..importances.len()).collect();
    ranking.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    Ok(ImportanceReport { importances, ranking })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    /// `100 − 100·MAPE`; `None` when some actual value is zero.
    pub mape_accuracy: Option<f64>,
}

pub fn evaluate_regression(predictions: &[f64], actuals: &[f64]) -> Result<RegressionMetrics> {
    if predictions.len() != actuals.len() {
        return Err(ForestError::LengthMismatch { left: predictions.len(), right: actuals.len() });
    }
    if actuals.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let n = actuals.len() as f64;
    let mae = predictions.iter().zip(actuals).map(|(p, a)| (a - p).abs()).sum::<f64>() / n;
    let mape_accuracy = if actuals.iter().any(|a| *a == 0.0) {
        None
    } else {
        let mape = predictions
            .iter()
            .zip(actuals)
            .map(|(p, a)| ((a - p) / a).abs())
            .sum::<f64>()
            / n;
        Some(100.0 - 100.0 * mape)
    };
    Ok(RegressionMetrics { mae, mape_accuracy })
}
