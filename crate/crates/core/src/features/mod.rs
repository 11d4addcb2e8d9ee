//! Daily resampling, moment features, normalization and chronological splits.
//!
//! The default schema yields 37 columns: nine base series (five market, four
//! epidemiological), a mean/skew/kurtosis triple for each of them, and the
//! next-day close as target. Market moments are intraday, over that day's
//! minute bars. Epi moments run over a trailing window of days that expands
//! at the start of the series. Windows too short or too flat for a moment
//! produce 0.0 and a warning.

mod frame;
mod normalize;
mod split;

pub use frame::{FeatureFrame, FrameSidecar};
pub use normalize::{apply_normalizer, fit_normalizer, Normalizer};
pub use split::{split_chronological, BlockOrder, SplitSpec, Splits};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AlignedRaw, DailyEpiRecord, MinuteBar};
use crate::stats::{self, StatsError};

pub const TARGET_COLUMN: &str = "target_next_close";
/// Prefix shared by every market-derived column.
pub const MARKET_PREFIX: &str = "btc_";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("market and epi series cover different days")]
    CoverageMismatch,
    #[error("epi window {0} is too small (minimum 4)")]
    WindowTooSmall(usize),
    #[error("column {0} has zero variance over the fitting rows")]
    ZeroVarianceColumn(String),
    #[error("frame columns do not match")]
    ColumnMismatch,
    #[error("too few rows: need {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("non-finite value in {column} on {date}")]
    NonFinite { date: NaiveDate, column: String },
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("dates not strictly increasing at {0}")]
    UnorderedDates(NaiveDate),
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Mean, G1 skewness and G2 excess kurtosis of one stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentTriple {
    pub mean: f64,
    pub skew: f64,
    pub kurt: f64,
}

impl MomentTriple {
    /// Degenerate skew/kurtosis become 0.0; the flag reports whether that
    /// happened.
    pub fn of(xs: &[f64]) -> Result<(Self, bool)> {
        let mean = stats::mean(xs)?;
        let (skew, d1) = stats::zero_if_degenerate(stats::sample_skewness(xs))?;
        let (kurt, d2) = stats::zero_if_degenerate(stats::excess_kurtosis(xs))?;
        Ok((Self { mean, skew, kurt }, d1 || d2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketStream {
    Open,
    High,
    Low,
    Close,
    Volume,
}

impl MarketStream {
    pub const ALL: [MarketStream; 5] = [Self::Open, Self::High, Self::Low, Self::Close, Self::Volume];

    pub fn column(self) -> &'static str {
        match self {
            Self::Open => "btc_open",
            Self::High => "btc_high",
            Self::Low => "btc_low",
            Self::Close => "btc_close",
            Self::Volume => "btc_volume",
        }
    }

    fn of(self, bar: &MinuteBar) -> f64 {
        match self {
            Self::Open => bar.open,
            Self::High => bar.high,
            Self::Low => bar.low,
            Self::Close => bar.close,
            Self::Volume => bar.volume,
        }
    }
}

/// One day of market data: OHLCV plus intraday moments of each stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBarAggregate {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub bar_count: usize,
    /// Indexed like [`MarketStream::ALL`].
    pub intraday: [MomentTriple; 5],
}

impl DailyBarAggregate {
    pub fn value(&self, stream: MarketStream) -> f64 {
        match stream {
            MarketStream::Open => self.open,
            MarketStream::High => self.high,
            MarketStream::Low => self.low,
            MarketStream::Close => self.close,
            MarketStream::Volume => self.volume,
        }
    }

    pub fn moments(&self, stream: MarketStream) -> MomentTriple {
        self.intraday[stream as usize]
    }
}

fn aggregate_day(date: NaiveDate, bars: &[MinuteBar]) -> Result<DailyBarAggregate> {
    let (first, last) = match (bars.first(), bars.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(FeatureError::TooFewRows { needed: 1, got: 0 }),
    };
    let mut intraday = [MomentTriple::default(); 5];
    let mut degenerate = Vec::new();
    for (slot, stream) in intraday.iter_mut().zip(MarketStream::ALL) {
        let xs: Vec<f64> = bars.iter().map(|b| stream.of(b)).collect();
        let (m, flat) = MomentTriple::of(&xs)?;
        *slot = m;
        if flat {
            degenerate.push(stream.column());
        }
    }
    if !degenerate.is_empty() {
        log::warn!(
            "{date}: degenerate intraday window ({} bars) for {}; moments set to 0",
            bars.len(),
            degenerate.join(", ")
        );
    }
    Ok(DailyBarAggregate {
        date,
        open: first.open,
        high: bars.iter().map(|b| b.high).fold(f64::NEG_INFINITY, f64::max),
        low: bars.iter().map(|b| b.low).fold(f64::INFINITY, f64::min),
        close: last.close,
        volume: bars.iter().map(|b| b.volume).sum(),
        bar_count: bars.len(),
        intraday,
    })
}

/// One aggregate per aligned day, in date order.
pub fn resample_daily(aligned: &AlignedRaw) -> Result<Vec<DailyBarAggregate>> {
    let days: Vec<(NaiveDate, &Vec<MinuteBar>)> = aligned.dates().zip(&aligned.bars).collect();
    days.par_iter()
        .map(|(date, bars)| aggregate_day(*date, bars))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpiStream {
    NewCases,
    CumulativeCases,
    NewDeaths,
    CumulativeDeaths,
}

impl EpiStream {
    pub const ALL: [EpiStream; 4] = [
        Self::NewCases,
        Self::CumulativeCases,
        Self::NewDeaths,
        Self::CumulativeDeaths,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Self::NewCases => "new_cases",
            Self::CumulativeCases => "cumulative_cases",
            Self::NewDeaths => "new_deaths",
            Self::CumulativeDeaths => "cumulative_deaths",
        }
    }

    fn of(self, r: &DailyEpiRecord) -> f64 {
        (match self {
            Self::NewCases => r.new_cases,
            Self::CumulativeCases => r.cumulative_cases,
            Self::NewDeaths => r.new_deaths,
            Self::CumulativeDeaths => r.cumulative_deaths,
        }) as f64
    }
}

/// Which columns [`engineer_features`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSchema {
    /// Trailing window (days) for epi moments.
    pub epi_window: usize,
    pub include_high_low: bool,
    pub include_moments: bool,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self {
            epi_window: 7,
            include_high_low: true,
            include_moments: true,
        }
    }
}

impl FeatureSchema {
    pub fn market_streams(&self) -> Vec<MarketStream> {
        MarketStream::ALL
            .into_iter()
            .filter(|s| self.include_high_low || !matches!(s, MarketStream::High | MarketStream::Low))
            .collect()
    }

    /// Column names in output order, target last.
    pub fn column_names(&self) -> Vec<String> {
        let bases: Vec<&str> = self
            .market_streams()
            .into_iter()
            .map(MarketStream::column)
            .chain(EpiStream::ALL.into_iter().map(EpiStream::column))
            .collect();
        let mut cols: Vec<String> = bases.iter().map(|s| s.to_string()).collect();
        if self.include_moments {
            for b in &bases {
                for suffix in ["mean", "skew", "kurt"] {
                    cols.push(format!("{b}_{suffix}"));
                }
            }
        }
        cols.push(TARGET_COLUMN.to_string());
        cols
    }
}

/// Output of [`engineer_features`]: supervised rows plus the final day,
/// whose next-day target is not yet known.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineeredFeatures {
    pub frame: FeatureFrame,
    pub inference_date: NaiveDate,
    /// Predictor values for `inference_date`, in frame predictor order.
    pub inference_row: Vec<f64>,
}

pub fn engineer_features(
    daily: &[DailyBarAggregate],
    epi: &[DailyEpiRecord],
    schema: &FeatureSchema,
) -> Result<EngineeredFeatures> {
    if schema.epi_window < 4 {
        return Err(FeatureError::WindowTooSmall(schema.epi_window));
    }
    if daily.len() != epi.len() || daily.iter().zip(epi).any(|(d, e)| d.date != e.date) {
        return Err(FeatureError::CoverageMismatch);
    }
    if daily.len() < 2 {
        return Err(FeatureError::TooFewRows { needed: 2, got: daily.len() });
    }

    let streams = schema.market_streams();
    let epi_series: Vec<Vec<f64>> = EpiStream::ALL
        .iter()
        .map(|s| epi.iter().map(|r| s.of(r)).collect())
        .collect();
    let epi_moments: Vec<Vec<MomentTriple>> = EpiStream::ALL
        .iter()
        .zip(&epi_series)
        .map(|(s, series)| trailing_moments(series, schema.epi_window, s.column(), epi))
        .collect::<Result<_>>()?;

    let columns = schema.column_names();
    let n_days = daily.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_days);
    for (i, day) in daily.iter().enumerate() {
        let mut row: Vec<f64> = streams.iter().map(|s| day.value(*s)).collect();
        row.extend(epi_series.iter().map(|series| series[i]));
        if schema.include_moments {
            for s in &streams {
                let m = day.moments(*s);
                row.extend([m.mean, m.skew, m.kurt]);
            }
            for moments in &epi_moments {
                let m = moments[i];
                row.extend([m.mean, m.skew, m.kurt]);
            }
        }
        rows.push(row);
    }

    let inference_row = rows.pop().expect("at least two days");
    let mut values = Vec::with_capacity((n_days - 1) * columns.len());
    for (i, row) in rows.iter().enumerate() {
        values.extend_from_slice(row);
        values.push(daily[i + 1].close);
    }
    let dates = daily[..n_days - 1].iter().map(|d| d.date).collect();
    Ok(EngineeredFeatures {
        frame: FeatureFrame::new(dates, columns, values, TARGET_COLUMN)?,
        inference_date: daily[n_days - 1].date,
        inference_row,
    })
}

/// Moments over `series[max(0, i-window+1)..=i]` for every `i`.
fn trailing_moments(
    series: &[f64],
    window: usize,
    name: &str,
    epi: &[DailyEpiRecord],
) -> Result<Vec<MomentTriple>> {
    let mut out = Vec::with_capacity(series.len());
    let mut flat_days = Vec::new();
    for i in 0..series.len() {
        let lo = (i + 1).saturating_sub(window);
        let (m, flat) = MomentTriple::of(&series[lo..=i])?;
        if flat {
            flat_days.push(epi[i].date);
        }
        out.push(m);
    }
    if let (Some(first), Some(last)) = (flat_days.first(), flat_days.last()) {
        log::warn!(
            "{name}: {} degenerate trailing windows between {first} and {last}; moments set to 0",
            flat_days.len()
        );
    }
    Ok(out)
}

/// True for columns derived from market data.
pub fn is_market_column(name: &str) -> bool {
    name.starts_with(MARKET_PREFIX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::align_date_range;
    use chrono::Days;
    use rand::{Rng, SeedableRng};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn bar(d: NaiveDate, minute: i64, close: f64, volume: f64) -> MinuteBar {
        let ts = d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis() + minute * 60_000;
        MinuteBar { ts, open: close - 0.5, close, high: close + 1.0, low: close - 1.0, volume }
    }

    fn epi_rec(d: NaiveDate, new: u64, cum: u64) -> DailyEpiRecord {
        DailyEpiRecord { date: d, new_cases: new, cumulative_cases: cum, new_deaths: 1, cumulative_deaths: 5 }
    }

    #[test]
    fn daily_aggregate_basics() {
        let d = date("2020-03-01");
        let bars = vec![bar(d, 0, 10.0, 1.0), bar(d, 1, 11.0, 2.0), bar(d, 2, 12.0, 3.0)];
        let agg = aggregate_day(d, &bars).unwrap();
        assert_eq!(agg.close, 12.0);
        assert_eq!(agg.open, 9.5);
        assert_eq!(agg.high, 13.0);
        assert_eq!(agg.low, 9.0);
        assert_eq!(agg.volume, 6.0);
        assert_eq!(agg.moments(MarketStream::Close).mean, 11.0);
        assert!(agg.low <= agg.open.min(agg.close) && agg.open.max(agg.close) <= agg.high);
    }

    #[test]
    fn single_bar_day_is_degenerate() {
        let d = date("2020-03-01");
        let agg = aggregate_day(d, &[bar(d, 5, 100.0, 2.0)]).unwrap();
        assert_eq!((agg.open, agg.close, agg.high, agg.low), (99.5, 100.0, 101.0, 99.0));
        for s in MarketStream::ALL {
            let m = agg.moments(s);
            assert_eq!((m.skew, m.kurt), (0.0, 0.0));
        }
    }

    #[test]
    fn intraday_moments_match_stats_module() {
        let d = date("2020-04-01");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut price = 7000.0;
        let bars: Vec<MinuteBar> = (0..1440)
            .map(|m| {
                price *= 1.0 + rng.random_range(-0.001..0.001);
                bar(d, m, price, rng.random_range(0.0..5.0))
            })
            .collect();
        let aligned = AlignedRaw {
            start_date: d,
            end_date: d,
            bars: vec![bars.clone()],
            epi: vec![epi_rec(d, 1, 1)],
        };
        let agg = &resample_daily(&aligned).unwrap()[0];
        let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
        let m = agg.moments(MarketStream::Close);
        assert_eq!(m.mean, stats::mean(&closes).unwrap());
        assert_eq!(m.skew, stats::sample_skewness(&closes).unwrap());
        assert_eq!(m.kurt, stats::excess_kurtosis(&closes).unwrap());
        let vols: Vec<f64> = bars.iter().map(|b| b.volume).collect();
        assert_eq!(agg.moments(MarketStream::Volume).kurt, stats::excess_kurtosis(&vols).unwrap());
    }

    fn inputs(n: u64, new_cases: impl Fn(u64) -> u64) -> (Vec<DailyBarAggregate>, Vec<DailyEpiRecord>) {
        let start = date("2020-01-06");
        let mut bars = Vec::new();
        let mut epi = Vec::new();
        let mut cum = 0;
        for i in 0..n {
            let d = start + Days::new(i);
            for m in 0..6 {
                bars.push(bar(d, m * 200, 7000.0 + (i * 7) as f64 + (m * m) as f64, 1.0 + m as f64));
            }
            cum += new_cases(i);
            epi.push(epi_rec(d, new_cases(i), cum));
        }
        let aligned = align_date_range(&bars, &epi, start, start + Days::new(n - 1)).unwrap();
        (resample_daily(&aligned).unwrap(), aligned.epi)
    }

    #[test]
    fn default_schema_has_37_columns() {
        let (daily, epi) = inputs(30, |i| i + 1);
        let out = engineer_features(&daily, &epi, &FeatureSchema::default()).unwrap();
        assert_eq!(out.frame.n_cols(), 37);
        assert_eq!(out.frame.predictor_indices().len(), 36);
        assert_eq!(out.frame.column_names().last().unwrap(), TARGET_COLUMN);
        assert_eq!(out.frame.n_rows(), 29);
        assert_eq!(out.inference_date, date("2020-02-04"));
        assert_eq!(out.inference_row.len(), 36);
        let closes = out.frame.column_by_name("btc_close").unwrap();
        let targets = out.frame.target_values();
        assert_eq!(&targets[..28], &closes[1..]);
        assert_eq!(targets[28], out.inference_row[3]);
    }

    #[test]
    fn alternate_schema() {
        let (daily, epi) = inputs(10, |i| i + 1);
        let schema = FeatureSchema { include_high_low: false, ..FeatureSchema::default() };
        let out = engineer_features(&daily, &epi, &schema).unwrap();
        assert_eq!(out.frame.n_cols(), 7 + 21 + 1);
        let bare = FeatureSchema { include_moments: false, ..FeatureSchema::default() };
        assert_eq!(engineer_features(&daily, &epi, &bare).unwrap().frame.n_cols(), 10);
    }

    #[test]
    fn trailing_mean_of_ramp() {
        let (daily, epi) = inputs(12, |i| i + 1);
        let out = engineer_features(&daily, &epi, &FeatureSchema::default()).unwrap();
        let means = out.frame.column_by_name("new_cases_mean").unwrap();
        // day 10 (index 9) averages new_cases 4..=10
        assert_eq!(means[9], 7.0);
        // expanding start: day 1 is its own mean
        assert_eq!(means[0], 1.0);
        let skews = out.frame.column_by_name("new_cases_skew").unwrap();
        assert_eq!(&skews[..2], &[0.0, 0.0]);
    }

    #[test]
    fn constant_epi_series_has_zero_moments() {
        let (daily, epi) = inputs(15, |_| 3);
        let out = engineer_features(&daily, &epi, &FeatureSchema::default()).unwrap();
        for col in ["new_cases", "new_deaths", "cumulative_deaths"] {
            for suffix in ["skew", "kurt"] {
                let v = out.frame.column_by_name(&format!("{col}_{suffix}")).unwrap();
                assert!(v.iter().all(|x| *x == 0.0), "{col}_{suffix}");
            }
        }
    }

    #[test]
    fn errors_and_determinism() {
        let (daily, epi) = inputs(10, |i| i * i);
        let small = FeatureSchema { epi_window: 3, ..FeatureSchema::default() };
        assert!(matches!(
            engineer_features(&daily, &epi, &small),
            Err(FeatureError::WindowTooSmall(3))
        ));
        assert!(matches!(
            engineer_features(&daily[1..], &epi, &FeatureSchema::default()),
            Err(FeatureError::CoverageMismatch)
        ));
        let a = engineer_features(&daily, &epi, &FeatureSchema::default()).unwrap();
        let b = engineer_features(&daily, &epi, &FeatureSchema::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.frame.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn market_columns() {
        let cols = FeatureSchema::default().column_names();
        let market: Vec<&String> = cols.iter().filter(|c| is_market_column(c)).collect();
        assert_eq!(market.len(), 20);
    }
}
