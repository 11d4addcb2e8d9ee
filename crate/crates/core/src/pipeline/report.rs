use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{FeatureMode, RunConfig};
use super::experiment::{AblationReport, ExperimentResult, PredictionRow};
use super::{AtStage, Cause, PipelineError, Result, Stage};
use crate::lstm::{ForecastMetrics, StopReason};
use crate::select::SelectionReport;

pub const METRICS_FORMAT_VERSION: u32 = 1;
const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub feature_mode: FeatureMode,
    pub features: Vec<String>,
    pub selection: Option<SelectionReport>,
    pub metrics: ForecastMetrics,
    pub windows: WindowCounts,
    pub test_first_date: NaiveDate,
    pub test_last_date: NaiveDate,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl ArmSummary {
    pub fn of(r: &ExperimentResult) -> Self {
        let test = &r.window_dates[2];
        Self {
            feature_mode: r.feature_mode,
            features: r.features.clone(),
            selection: r.selection.clone(),
            metrics: r.metrics,
            windows: WindowCounts {
                train: r.window_dates[0].len(),
                validation: r.window_dates[1].len(),
                test: test.len(),
            },
            test_first_date: test[0],
            test_last_date: test[test.len() - 1],
            best_epoch: r.train_report.best_epoch,
            stopped_epoch: r.train_report.stopped_epoch,
            best_val_loss: r.train_report.best_val_loss,
            stop_reason: r.train_report.stop_reason,
        }
    }
}

/// `metrics.json` for a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetricsFile {
    pub format_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub seed: u64,
    pub config: RunConfig,
    pub result: ArmSummary,
}

/// `metrics.json` at the top of an ablation output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMetricsFile {
    pub format_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub seed: u64,
    pub config: RunConfig,
    pub baseline: ArmSummary,
    pub treatment: ArmSummary,
    pub delta_mae: f64,
    pub delta_mae_price_units: f64,
    pub treatment_improved: bool,
}

/// The config as echoed into reports, with effective seeds. The output
/// location is left out so identical runs into different directories
/// produce identical files.
fn echo(config: &RunConfig) -> RunConfig {
    RunConfig {
        output_dir: RunConfig::default().output_dir,
        forest: config.forest_config(),
        train: config.train_config(),
        ..config.clone()
    }
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn predictions_csv(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "actual", "predicted", "actual_norm", "predicted_norm"]).at(Stage::Report)?;
    for r in rows {
        w.write_record([
            r.date.to_string(),
            r.actual.to_string(),
            r.predicted.to_string(),
            r.actual_norm.to_string(),
            r.predicted_norm.to_string(),
        ])
        .at(Stage::Report)?;
    }
    w.into_inner().map_err(|e| PipelineError::new(Stage::Report, e.into_error()))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).at(Stage::Report)?;
    r.deserialize().collect::<std::result::Result<Vec<PredictionRow>, _>>().at(Stage::Report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SvgUnits {
    #[default]
    Price,
    Normalized,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Actual vs predicted over the test range as a standalone SVG.
pub fn render_svg(rows: &[PredictionRow], units: SvgUnits, title: &str) -> Result<String> {
    if rows.is_empty() {
        return Err(PipelineError::new(Stage::Report, Cause::Data("no predictions to plot".into())));
    }
    let (w, h) = (800.0, 420.0);
    let (left, right, top, bottom) = (80.0, 20.0, 40.0, 60.0);
    let pick = |r: &PredictionRow| match units {
        SvgUnits::Price => (r.actual, r.predicted),
        SvgUnits::Normalized => (r.actual_norm, r.predicted_norm),
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in rows {
        let (a, p) = pick(r);
        lo = lo.min(a.min(p));
        hi = hi.max(a.max(p));
    }
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let n = rows.len();
    let sx = |i: usize| left + if n > 1 { plot_w * i as f64 / (n - 1) as f64 } else { plot_w / 2.0 };
    let sy = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, xml_escape(title));

    // axes
    let (x0, y0, x1, y1) = (left, top + plot_h, left + plot_w, top);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
        let label = match units {
            SvgUnits::Price => format!("{v:.0}"),
            SvgUnits::Normalized => format!("{v:.2}"),
        };
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 8.0, y + 4.0);
    }
    let ticks: Vec<usize> = if n > 2 { vec![0, (n - 1) / 2, n - 1] } else { (0..n).collect() };
    for i in ticks {
        let x = sx(i);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 20.0, rows[i].date);
    }
    let y_label = match units {
        SvgUnits::Price => "price (USD)",
        SvgUnits::Normalized => "normalized close",
    };
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">date</text>"#, left + plot_w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{y_label}</text>"#,
        top + plot_h / 2.0
    );

    let series = |f: &dyn Fn(&PredictionRow) -> f64| {
        rows.iter().enumerate().map(|(i, r)| format!("{:.2},{:.2}", sx(i), sy(f(r)))).collect::<Vec<_>>().join(" ")
    };
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        series(&|r| pick(r).0)
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6 3" points="{}"/>"##,
        series(&|r| pick(r).1)
    );

    // legend
    let (lx, ly) = (left + 15.0, top + 12.0);
    let _ = writeln!(s, r##"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="#1f77b4" stroke-width="2"/>"##, lx + 25.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}">actual</text>"#, lx + 30.0, ly + 4.0);
    let _ = writeln!(
        s,
        r##"<line x1="{lx}" y1="{0}" x2="{1}" y2="{0}" stroke="#d62728" stroke-width="2" stroke-dasharray="6 3"/>"##,
        ly + 18.0,
        lx + 25.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}">predicted</text>"#, lx + 30.0, ly + 22.0);
    s.push_str("</svg>\n");
    Ok(s)
}

fn json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v).at(Stage::Report)?;
    out.push(b'\n');
    Ok(out)
}

fn put(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    write_atomic(&path, bytes).at(Stage::Report)?;
    written.push(path);
    Ok(())
}

fn emit_arm(result: &ExperimentResult, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let title = format!("Next-day close, {} features", result.feature_mode);
    let svg = render_svg(&result.predictions, SvgUnits::Price, &title)?;
    put(dir, "predictions.csv", &predictions_csv(&result.predictions)?, written)?;
    put(dir, "predictions.svg", svg.as_bytes(), written)?;
    put(dir, "model.json", result.model.to_json().as_bytes(), written)?;
    let mut report = Vec::new();
    result.train_report.write_csv(&mut report).at(Stage::Report)?;
    put(dir, "train_report.csv", &report, written)?;
    if let Some(sel) = &result.selection {
        put(dir, "selection.json", &json(sel)?, written)?;
    }
    Ok(())
}

/// Writes `metrics.json`, `predictions.csv`, `predictions.svg`,
/// `model.json`, `train_report.csv` and, when selection ran,
/// `selection.json`.
pub fn emit_experiment(result: &ExperimentResult, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.predictions.is_empty() {
        return Err(PipelineError::new(Stage::Report, Cause::Data("no predictions to report".into())));
    }
    let mut written = Vec::new();
    let metrics = ExperimentMetricsFile {
        format_version: METRICS_FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        kind: "experiment".into(),
        seed: config.seed,
        config: echo(config),
        result: ArmSummary::of(result),
    };
    put(dir, "metrics.json", &json(&metrics)?, &mut written)?;
    emit_arm(result, dir, &mut written)?;
    Ok(written)
}

/// Top-level `metrics.json` plus one subdirectory per arm.
pub fn emit_ablation(report: &AblationReport, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    for arm in [&report.baseline, &report.treatment] {
        if arm.predictions.is_empty() {
            return Err(PipelineError::new(Stage::Report, Cause::Data("no predictions to report".into())));
        }
    }
    let mut written = Vec::new();
    let metrics = AblationMetricsFile {
        format_version: METRICS_FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        kind: "ablation".into(),
        seed: config.seed,
        config: echo(config),
        baseline: ArmSummary::of(&report.baseline),
        treatment: ArmSummary::of(&report.treatment),
        delta_mae: report.delta_mae,
        delta_mae_price_units: report.baseline.metrics.mae_price_units - report.treatment.metrics.mae_price_units,
        treatment_improved: report.treatment_improved,
    };
    put(dir, "metrics.json", &json(&metrics)?, &mut written)?;
    emit_arm(&report.baseline, &dir.join("baseline"), &mut written)?;
    emit_arm(&report.treatment, &dir.join("treatment"), &mut written)?;
    Ok(written)
}
