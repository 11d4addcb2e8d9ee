use std::fs::File;
use std::io::BufReader;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, FeatureMode, RunConfig};
use super::{report, AtStage, Cause, PipelineError, Result, Stage};
use crate::features::{
    engineer_features, fit_normalizer, is_market_column, resample_daily, split_chronological, EngineeredFeatures,
    FeatureFrame, Normalizer,
};
use crate::ingest::{align_date_range, parse_epi_daily, parse_minute_bars};
use crate::lstm::{
    evaluate_forecaster, make_windows, train_lstm, ForecastMetrics, LstmModel, TrainReport, WindowedDataset,
};
use crate::select::{select_features, SelectionReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
    pub actual_norm: f64,
    pub predicted_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub feature_mode: FeatureMode,
    pub seed: u64,
    pub features: Vec<String>,
    pub selection: Option<SelectionReport>,
    pub metrics: ForecastMetrics,
    pub predictions: Vec<PredictionRow>,
    pub train_report: TrainReport,
    pub model: LstmModel,
    pub normalizer: Normalizer,
    /// Target dates of the train, validation and test windows.
    pub window_dates: [Vec<NaiveDate>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub baseline: ExperimentResult,
    pub treatment: ExperimentResult,
    /// Baseline minus treatment, normalized units.
    pub delta_mae: f64,
    pub treatment_improved: bool,
}

fn open(path: &std::path::Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| PipelineError::new(Stage::Ingest, ConfigError::Io { path: path.to_path_buf(), source }))
}

/// Read both sources, align them and engineer the daily frame.
pub fn build_features(config: &RunConfig) -> Result<EngineeredFeatures> {
    config.require_inputs().at(Stage::Config)?;
    let bars = parse_minute_bars(open(&config.data.minute_csv)?, config.data.order_policy).at(Stage::Ingest)?;
    let epi = parse_epi_daily(open(&config.data.epi_csv)?, &config.data.epi_scope).at(Stage::Ingest)?;
    let (first_bar, last_bar) = match (bars.first(), bars.last()) {
        (Some(a), Some(b)) => (a.date(), b.date()),
        _ => return Err(PipelineError::new(Stage::Ingest, Cause::Data("no minute bars".into()))),
    };
    let (first_epi, last_epi) = match (epi.first(), epi.last()) {
        (Some(a), Some(b)) => (a.date, b.date),
        _ => return Err(PipelineError::new(Stage::Ingest, Cause::Data("no epi records".into()))),
    };
    let start = config.data.start_date.unwrap_or(first_bar.max(first_epi));
    let end = config.data.end_date.unwrap_or(last_bar.min(last_epi));
    let aligned = align_date_range(&bars, &epi, start, end).at(Stage::Ingest)?;
    log::info!("aligned {} days, {start} to {end}", aligned.day_count());
    let daily = resample_daily(&aligned).at(Stage::Features)?;
    engineer_features(&daily, &aligned.epi, &config.features).at(Stage::Features)
}

fn choose_features(
    frame: &FeatureFrame,
    train: &FeatureFrame,
    config: &RunConfig,
    mode: FeatureMode,
) -> Result<(Vec<String>, Option<SelectionReport>)> {
    let forest = config.forest_config();
    let (names, report) = match mode {
        FeatureMode::PriceOnly => {
            let market: Vec<String> =
                frame.predictor_names().into_iter().filter(|n| is_market_column(n)).map(String::from).collect();
            if config.select_price_only {
                let sub = train.select_predictors(&market).at(Stage::Selection)?;
                let rep = select_features(&sub, &config.select, &forest).at(Stage::Selection)?;
                (rep.feature_names(), Some(rep))
            } else {
                (market, None)
            }
        }
        FeatureMode::Full => {
            let rep = select_features(train, &config.select, &forest).at(Stage::Selection)?;
            (rep.feature_names(), Some(rep))
        }
    };
    if names.is_empty() {
        return Err(PipelineError::new(Stage::Selection, Cause::Data(format!("no features left for {mode} arm"))));
    }
    Ok((names, report))
}

fn windows(frame: &FeatureFrame, rows: &Range<usize>, config: &RunConfig) -> Result<WindowedDataset> {
    make_windows(&frame.slice_rows(rows.clone()), &config.window).at(Stage::Windowing)
}

/// One arm on an already engineered frame. Selection sees the training
/// split only; normalization is fitted on the same rows.
pub fn run_experiment_on_frame(frame: &FeatureFrame, config: &RunConfig, mode: FeatureMode) -> Result<ExperimentResult> {
    config.validate().at(Stage::Config)?;
    let splits = split_chronological(frame, &config.split).at(Stage::Features)?;
    let (features, selection) = choose_features(frame, &splits.train, config, mode)?;
    log::info!("{mode} arm: {} features", features.len());

    let sub = frame.select_predictors(&features).at(Stage::Features)?;
    let normalizer = fit_normalizer(&sub, splits.train_rows.clone()).at(Stage::Features)?;
    let z = normalizer.apply(&sub).at(Stage::Features)?;

    let train = windows(&z, &splits.train_rows, config)?;
    let val = windows(&z, &splits.validation_rows, config)?;
    let test = windows(&z, &splits.test_rows, config)?;

    let (model, train_report) = train_lstm(&train, &val, &config.train_config()).at(Stage::Training)?;
    let eval = evaluate_forecaster(&model, &test, &normalizer).at(Stage::Evaluation)?;

    let target = frame.target_name();
    let predictions = test
        .targets
        .iter()
        .zip(&eval.predictions)
        .zip(&test.target_dates)
        .map(|((&a, &p), &date)| {
            Ok(PredictionRow {
                date,
                actual: normalizer.denormalize(target, a)?,
                predicted: normalizer.denormalize(target, p)?,
                actual_norm: a,
                predicted_norm: p,
            })
        })
        .collect::<std::result::Result<Vec<_>, crate::features::FeatureError>>()
        .at(Stage::Evaluation)?;

    Ok(ExperimentResult {
        feature_mode: mode,
        seed: config.seed,
        features,
        selection,
        metrics: eval.metrics,
        predictions,
        train_report,
        model,
        normalizer,
        window_dates: [train.target_dates, val.target_dates, test.target_dates],
    })
}

/// Both arms with identical split, window, training config and seed.
pub fn run_ablation_on_frame(frame: &FeatureFrame, config: &RunConfig) -> Result<AblationReport> {
    let (baseline, treatment) = rayon::join(
        || run_experiment_on_frame(frame, config, FeatureMode::PriceOnly),
        || run_experiment_on_frame(frame, config, FeatureMode::Full),
    );
    let (baseline, treatment) = (baseline?, treatment?);
    if baseline.window_dates != treatment.window_dates {
        return Err(PipelineError::new(Stage::Windowing, Cause::Data("ablation arms saw different windows".into())));
    }
    let delta_mae = baseline.metrics.mae_normalized - treatment.metrics.mae_normalized;
    Ok(AblationReport { delta_mae, treatment_improved: delta_mae > 0.0, baseline, treatment })
}

/// Full run in `config.feature_mode`, artifacts under `config.output_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult> {
    let eng = build_features(config)?;
    let result = run_experiment_on_frame(&eng.frame, config, config.feature_mode)?;
    report::emit_experiment(&result, config, &config.output_dir)?;
    Ok(result)
}

/// Both arms; artifacts under `baseline/` and `treatment/` with a
/// summary `metrics.json` at the top of `config.output_dir`.
pub fn run_ablation(config: &RunConfig) -> Result<AblationReport> {
    let eng = build_features(config)?;
    let rep = run_ablation_on_frame(&eng.frame, config)?;
    report::emit_ablation(&rep, config, &config.output_dir)?;
    Ok(rep)
}
