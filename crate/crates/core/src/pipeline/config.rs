use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSchema, SplitSpec};
use crate::forest::ForestConfig;
use crate::ingest::{EpiScope, OrderPolicy, DEFAULT_CANDLES_BASE_URL, DEFAULT_WHO_CSV_URL};
use crate::lstm::{TrainConfig, WindowSpec};
use crate::select::SelectConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("input file {0} does not exist")]
    MissingInput(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Market-derived columns only.
    PriceOnly,
    /// All predictors, screened by the selection stage.
    Full,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::PriceOnly => "price_only",
            FeatureMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Minute candles, header `ts,open,close,high,low,volume`.
    pub minute_csv: PathBuf,
    /// WHO daily layout.
    pub epi_csv: PathBuf,
    pub epi_scope: EpiScope,
    pub order_policy: OrderPolicy,
    /// Inclusive range; when absent, the overlap of both sources.
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            minute_csv: PathBuf::from("data/minute.csv"),
            epi_csv: PathBuf::from("data/epi.csv"),
            epi_scope: EpiScope::GlobalSum,
            order_policy: OrderPolicy::RejectUnsorted,
            start_date: None,
            end_date: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FetchConfig {
    pub symbol: String,
    pub granularity: String,
    pub candles_base_url: String,
    pub epi_url: String,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            symbol: "tBTCUSD".into(),
            granularity: "1m".into(),
            candles_base_url: DEFAULT_CANDLES_BASE_URL.into(),
            epi_url: DEFAULT_WHO_CSV_URL.into(),
        }
    }
}

/// Everything one run needs. Relative paths resolve against the config
/// file's directory. `seed` overrides the forest and training seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub feature_mode: FeatureMode,
    /// Also run selection in the price-only arm, over market columns.
    pub select_price_only: bool,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub fetch: FetchConfig,
    pub features: FeatureSchema,
    pub select: SelectConfig,
    pub forest: ForestConfig,
    pub split: SplitSpec,
    pub window: WindowSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            feature_mode: FeatureMode::Full,
            select_price_only: false,
            output_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            fetch: FetchConfig::default(),
            features: FeatureSchema::default(),
            select: SelectConfig::default(),
            forest: ForestConfig::default(),
            split: SplitSpec::default(),
            window: WindowSpec::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, validate and resolve paths. Input existence is checked
    /// separately so `fetch` can target files that do not exist yet.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.minute_csv, &mut self.data.epi_csv, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn require_inputs(&self) -> Result<(), ConfigError> {
        for p in [&self.data.minute_csv, &self.data.epi_csv] {
            if !p.is_file() {
                return Err(ConfigError::MissingInput(p.clone()));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        if let (Some(s), Some(e)) = (self.data.start_date, self.data.end_date) {
            if s > e {
                return Err(ConfigError::Invalid(format!("start_date {s} after end_date {e}")));
            }
        }
        if self.features.epi_window < 4 {
            return Err(ConfigError::Invalid(format!("features.epi_window {} < 4", self.features.epi_window)));
        }
        self.select.validate().map_err(|e| invalid(&e))?;
        self.forest_config().validate().map_err(|e| invalid(&e))?;
        self.split.validate().map_err(|e| invalid(&e))?;
        self.window.validate().map_err(|e| invalid(&e))?;
        self.train_config().validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig { master_seed: self.seed, ..self.forest.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}
