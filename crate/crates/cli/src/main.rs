use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use exoforecast::features::{split_chronological, FrameSidecar};
use exoforecast::ingest::{CandleQuery, FetchError, Fetcher, HttpResponse, HttpTransport, RemoteSource};
use exoforecast::pipeline::{
    self, build_features, read_predictions_csv, render_svg, run_ablation, run_experiment, write_atomic,
    PipelineError, RunConfig, SvgUnits,
};
use exoforecast::select::select_features;

#[derive(Parser)]
#[command(name = "exoforecast", version, about = "Next-day BTC close forecasting with exogenous epidemic features")]
struct Cli {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Repeat for more detail.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download minute candles and the WHO daily CSV to the configured data paths.
    Fetch {
        #[arg(long)]
        allow_network: bool,
    },
    /// Write the engineered daily frame and its sidecar.
    BuildFeatures,
    /// Run forest and correlation selection on the training split.
    Select,
    /// Train and evaluate one arm in the configured feature mode.
    Train,
    /// Run the price-only and full arms side by side.
    Ablation,
    /// Redraw predictions.svg from an existing predictions.csv.
    Report {
        /// Run directory; defaults to the output directory.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Units::Price)]
        units: Units,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Price,
    Normalized,
}

struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    fn new() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, FetchError> {
        let http = |e: ureq::Error| FetchError::Http { status: None, message: e.to_string() };
        let mut resp = self.agent.get(url).call().map_err(http)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(u64::MAX).read_to_vec().map_err(http)?;
        Ok(HttpResponse { status, body })
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| PipelineError::new(pipeline::Stage::Config, e))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn fetch(cfg: &RunConfig) -> anyhow::Result<()> {
    let (Some(start), Some(end)) = (cfg.data.start_date, cfg.data.end_date) else {
        return Err(PipelineError::new(
            pipeline::Stage::Config,
            pipeline::ConfigError::Invalid("fetch needs data.start_date and data.end_date".into()),
        )
        .into());
    };
    let mut fetcher = Fetcher::new(UreqTransport::new());
    fetcher.candles_base_url = cfg.fetch.candles_base_url.clone();
    let sources = [
        (
            RemoteSource::Candles(CandleQuery {
                symbol: cfg.fetch.symbol.clone(),
                granularity: cfg.fetch.granularity.clone(),
                start,
                end,
            }),
            &cfg.data.minute_csv,
        ),
        (RemoteSource::EpiCsv { url: cfg.fetch.epi_url.clone() }, &cfg.data.epi_csv),
    ];
    for (source, path) in sources {
        // stage in memory so a failed download never clobbers an existing file
        let mut buf = Vec::new();
        let n = fetcher.fetch_remote(&source, &mut buf).map_err(|e| PipelineError::new(pipeline::Stage::Fetch, e))?;
        write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {n} bytes to {}", path.display());
    }
    Ok(())
}

fn build(cfg: &RunConfig) -> anyhow::Result<()> {
    let eng = build_features(cfg)?;
    let dir = &cfg.output_dir;
    let mut csv = Vec::new();
    eng.frame.write_csv(&mut csv)?;
    write_atomic(&dir.join("features.csv"), &csv)?;
    let sidecar = FrameSidecar {
        format_version: 1,
        columns: eng.frame.column_names().to_vec(),
        target: eng.frame.target_name().to_string(),
        schema: cfg.features,
        normalizer: None,
        inference_date: Some(eng.inference_date),
        inference_row: Some(eng.inference_row.clone()),
    };
    write_atomic(&dir.join("features.json"), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
    println!(
        "{} rows x {} columns, {} to {}; wrote {}",
        eng.frame.n_rows(),
        eng.frame.n_cols(),
        eng.frame.dates()[0],
        eng.frame.dates()[eng.frame.n_rows() - 1],
        dir.join("features.csv").display()
    );
    Ok(())
}

fn select(cfg: &RunConfig) -> anyhow::Result<()> {
    let eng = build_features(cfg)?;
    let stage = |e| PipelineError::new(pipeline::Stage::Selection, e);
    let splits = split_chronological(&eng.frame, &cfg.split).map_err(|e| PipelineError::new(pipeline::Stage::Features, e))?;
    let report = select_features(&splits.train, &cfg.select, &cfg.forest_config()).map_err(stage)?;
    write_atomic(&cfg.output_dir.join("selection.json"), report.to_json().as_bytes())?;
    println!("{report}");
    Ok(())
}

fn redraw(dir: &Path, units: Units) -> anyhow::Result<()> {
    let units = match units {
        Units::Price => SvgUnits::Price,
        Units::Normalized => SvgUnits::Normalized,
    };
    let mut dirs: Vec<PathBuf> = ["baseline", "treatment"].iter().map(|s| dir.join(s)).filter(|d| d.is_dir()).collect();
    if dirs.is_empty() {
        dirs.push(dir.to_path_buf());
    }
    for d in dirs {
        let csv = d.join("predictions.csv");
        if !csv.is_file() {
            bail!("no predictions.csv in {}", d.display());
        }
        let rows = read_predictions_csv(&csv)?;
        let title = format!("Next-day close, {}", d.file_name().and_then(|s| s.to_str()).unwrap_or("run"));
        write_atomic(&d.join("predictions.svg"), render_svg(&rows, units, &title)?.as_bytes())?;
        println!("wrote {}", d.join("predictions.svg").display());
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Fetch { allow_network } => {
            if !allow_network {
                bail!(UsageError("fetch needs --allow-network".into()));
            }
            fetch(&cfg)
        }
        Command::BuildFeatures => build(&cfg),
        Command::Select => select(&cfg),
        Command::Train => {
            let r = run_experiment(&cfg)?;
            println!(
                "{} arm, {} features: test MAE {:.4} (normalized), loss {:.4}, MAE {:.2} (price units)",
                r.feature_mode,
                r.features.len(),
                r.metrics.mae_normalized,
                r.metrics.loss_normalized,
                r.metrics.mae_price_units
            );
            Ok(())
        }
        Command::Ablation => {
            let r = run_ablation(&cfg)?;
            for arm in [&r.baseline, &r.treatment] {
                println!(
                    "{:<10} {:>2} features  MAE {:.4}  loss {:.4}  MAE {:.2} USD",
                    arm.feature_mode.to_string(),
                    arm.features.len(),
                    arm.metrics.mae_normalized,
                    arm.metrics.loss_normalized,
                    arm.metrics.mae_price_units
                );
            }
            println!(
                "delta MAE {:+.4}; exogenous features {}",
                r.delta_mae,
                if r.treatment_improved { "improved the forecast" } else { "did not improve the forecast" }
            );
            Ok(())
        }
        Command::Report { from, units } => redraw(from.as_deref().unwrap_or(&cfg.output_dir), units),
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_host_is_http_error() {
        // port 9 (discard) on loopback is closed in the sandbox and in CI
        let err = UreqTransport::new().get("http://127.0.0.1:9/candles").unwrap_err();
        assert!(matches!(err, FetchError::Http { status: None, .. }), "{err:?}");
    }

    #[test]
    fn parses_global_flags() {
        let cli = Cli::try_parse_from(["exoforecast", "ablation", "--seed", "7", "--out", "o", "-vv"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.verbose, 2);
        assert!(matches!(cli.command, Command::Ablation));
    }
}
