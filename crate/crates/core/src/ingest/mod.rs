//! Raw data sources: exchange minute candles and WHO daily counts.
//!
//! Days are UTC calendar days. Minutes missing within a day are fine; a day
//! with no bars at all is an error at alignment time.

mod fetch;

pub use fetch::{
    DEFAULT_CANDLES_BASE_URL, DEFAULT_PAGE_LIMIT, DEFAULT_WHO_CSV_URL,
    CandleQuery, FetchError, Fetcher, HttpResponse, HttpTransport, RemoteSource,
};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Days, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MINUTE_CSV_HEADER: [&str; 6] = ["ts", "open", "close", "high", "low", "volume"];
pub const EPI_CSV_HEADER: [&str; 8] = [
    "Date_reported",
    "Country_code",
    "Country",
    "WHO_region",
    "New_cases",
    "Cumulative_cases",
    "New_deaths",
    "Cumulative_deaths",
];

const MS_PER_MINUTE: i64 = 60_000;
const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("timestamps not increasing at line {line}")]
    NonMonotonicTimestamps { line: u64 },
    #[error("duplicate timestamp {ts}")]
    DuplicateTimestamp { ts: i64 },
    #[error("input contains no data rows")]
    EmptyInput,
    #[error("date sequence has a gap: {after} is followed by {next}")]
    MissingDate { after: NaiveDate, next: NaiveDate },
    #[error("negative or decreasing count in {field} between {prev} and {date}")]
    NegativeCount {
        field: &'static str,
        prev: NaiveDate,
        date: NaiveDate,
    },
    #[error("no epidemiological record for {0}")]
    MissingEpiDay(NaiveDate),
    #[error("no market bars for {0}")]
    MissingMarketDay(NaiveDate),
    #[error("empty date range {start}..={end}")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One exchange candle. `ts` is the UTC minute start in epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinuteBar {
    pub ts: i64,
    pub open: f64,
    pub close: f64,
    pub high: f64,
    pub low: f64,
    pub volume: f64,
}

impl MinuteBar {
    pub fn date(&self) -> NaiveDate {
        DateTime::from_timestamp_millis(self.ts.div_euclid(MS_PER_DAY) * MS_PER_DAY)
            .expect("timestamp in chrono range")
            .date_naive()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let fields = [self.open, self.close, self.high, self.low, self.volume];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.ts.rem_euclid(MS_PER_MINUTE) != 0 {
            return Err(format!("timestamp {} is not a whole minute", self.ts));
        }
        if self.low > self.open.min(self.close) || self.high < self.open.max(self.close) {
            return Err("high/low do not bound open and close".into());
        }
        if self.volume < 0.0 {
            return Err("negative volume".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    RejectUnsorted,
    Sort,
}

/// Parse the minute CSV (`ts,open,close,high,low,volume`).
pub fn parse_minute_bars<R: Read>(input: R, policy: OrderPolicy) -> Result<Vec<MinuteBar>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(MINUTE_CSV_HEADER) {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", MINUTE_CSV_HEADER.join(",")),
        });
    }

    let mut bars = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let bar = parse_bar(&record).map_err(|reason| IngestError::MalformedRow { line, reason })?;
        if policy == OrderPolicy::RejectUnsorted {
            if let Some(prev) = bars.last().map(|b: &MinuteBar| b.ts) {
                if bar.ts == prev {
                    return Err(IngestError::DuplicateTimestamp { ts: bar.ts });
                }
                if bar.ts < prev {
                    return Err(IngestError::NonMonotonicTimestamps { line });
                }
            }
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    if policy == OrderPolicy::Sort {
        bars.sort_by_key(|b| b.ts);
        if let Some(w) = bars.windows(2).find(|w| w[0].ts == w[1].ts) {
            return Err(IngestError::DuplicateTimestamp { ts: w[0].ts });
        }
    }
    Ok(bars)
}

fn parse_bar(record: &csv::StringRecord) -> std::result::Result<MinuteBar, String> {
    if record.len() != MINUTE_CSV_HEADER.len() {
        return Err(format!("expected 6 fields, found {}", record.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        record[i]
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("field {} = {:?} is not a number", MINUTE_CSV_HEADER[i], &record[i]))
    };
    let ts = record[0]
        .trim()
        .parse::<i64>()
        .map_err(|_| format!("ts = {:?} is not an integer", &record[0]))?;
    let bar = MinuteBar {
        ts,
        open: num(1)?,
        close: num(2)?,
        high: num(3)?,
        low: num(4)?,
        volume: num(5)?,
    };
    bar.validate()?;
    Ok(bar)
}

/// Serialize bars in the minute CSV layout. Floats use shortest round-trip
/// formatting, so parsing the output reproduces the input exactly.
pub fn write_minute_bars<W: Write>(out: W, bars: &[MinuteBar]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(MINUTE_CSV_HEADER)?;
    for b in bars {
        writer.write_record([
            b.ts.to_string(),
            b.open.to_string(),
            b.close.to_string(),
            b.high.to_string(),
            b.low.to_string(),
            b.volume.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// One day of WHO counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyEpiRecord {
    pub date: NaiveDate,
    pub new_cases: u64,
    pub cumulative_cases: u64,
    pub new_deaths: u64,
    pub cumulative_deaths: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpiScope {
    GlobalSum,
    Country(String),
}

#[derive(Default, Clone, Copy)]
struct EpiSums {
    new_cases: i64,
    cumulative_cases: i64,
    new_deaths: i64,
    cumulative_deaths: i64,
}

/// Parse the WHO global daily CSV, either summed over all countries or
/// restricted to one `Country_code`.
pub fn parse_epi_daily<R: Read>(input: R, scope: &EpiScope) -> Result<Vec<DailyEpiRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim())
        .collect();
    if names != EPI_CSV_HEADER {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("expected header {}", EPI_CSV_HEADER.join(",")),
        });
    }

    let mut by_date: BTreeMap<NaiveDate, EpiSums> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        if record.len() != EPI_CSV_HEADER.len() {
            return Err(malformed(format!("expected 8 fields, found {}", record.len())));
        }
        if let EpiScope::Country(code) = scope {
            if record[1].trim() != code {
                continue;
            }
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d")
            .map_err(|_| malformed(format!("bad date {:?}", &record[0])))?;
        // Recent WHO exports leave daily counts blank on non-reporting days.
        let count = |i: usize, blank_ok: bool| -> Result<i64> {
            let field = record[i].trim();
            if field.is_empty() && blank_ok {
                return Ok(0);
            }
            field
                .parse::<i64>()
                .map_err(|_| malformed(format!("{} = {field:?} is not an integer", EPI_CSV_HEADER[i])))
        };
        let entry = by_date.entry(date).or_default();
        entry.new_cases += count(4, true)?;
        entry.cumulative_cases += count(5, false)?;
        entry.new_deaths += count(6, true)?;
        entry.cumulative_deaths += count(7, false)?;
    }
    if by_date.is_empty() {
        return Err(IngestError::EmptyInput);
    }

    let mut out: Vec<DailyEpiRecord> = Vec::with_capacity(by_date.len());
    for (date, s) in by_date {
        if let Some(prev) = out.last() {
            if prev.date.succ_opt() != Some(date) {
                return Err(IngestError::MissingDate {
                    after: prev.date,
                    next: date,
                });
            }
        }
        let prev_date = out.last().map_or(date, |p| p.date);
        let checked = |field: &'static str, v: i64| -> Result<u64> {
            u64::try_from(v).map_err(|_| IngestError::NegativeCount {
                field,
                prev: prev_date,
                date,
            })
        };
        let rec = DailyEpiRecord {
            date,
            new_cases: checked("new_cases", s.new_cases)?,
            cumulative_cases: checked("cumulative_cases", s.cumulative_cases)?,
            new_deaths: checked("new_deaths", s.new_deaths)?,
            cumulative_deaths: checked("cumulative_deaths", s.cumulative_deaths)?,
        };
        if let Some(prev) = out.last() {
            if rec.cumulative_cases < prev.cumulative_cases {
                return Err(IngestError::NegativeCount {
                    field: "cumulative_cases",
                    prev: prev.date,
                    date,
                });
            }
            if rec.cumulative_deaths < prev.cumulative_deaths {
                return Err(IngestError::NegativeCount {
                    field: "cumulative_deaths",
                    prev: prev.date,
                    date,
                });
            }
            if rec.new_cases != rec.cumulative_cases - prev.cumulative_cases
                || rec.new_deaths != rec.cumulative_deaths - prev.cumulative_deaths
            {
                log::debug!("{date}: daily counts disagree with cumulative differences");
            }
        }
        out.push(rec);
    }
    Ok(out)
}

/// Market bars and epi records restricted to a common inclusive day range.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRaw {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    /// One entry per day, in date order.
    pub bars: Vec<Vec<MinuteBar>>,
    pub epi: Vec<DailyEpiRecord>,
}

impl AlignedRaw {
    pub fn day_count(&self) -> usize {
        self.epi.len()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.epi.iter().map(|e| e.date)
    }

    pub fn bar_counts(&self) -> Vec<(NaiveDate, usize)> {
        self.dates().zip(self.bars.iter().map(Vec::len)).collect()
    }
}

/// Restrict both sources to `[start, end]`, requiring full day coverage.
pub fn align_date_range(
    bars: &[MinuteBar],
    epi: &[DailyEpiRecord],
    start: NaiveDate,
    end: NaiveDate,
) -> Result<AlignedRaw> {
    if start > end {
        return Err(IngestError::EmptyRange { start, end });
    }
    let epi_by_date: BTreeMap<NaiveDate, &DailyEpiRecord> =
        epi.iter().map(|r| (r.date, r)).collect();
    let mut bars_by_date: BTreeMap<NaiveDate, Vec<MinuteBar>> = BTreeMap::new();
    for bar in bars {
        let d = bar.date();
        if d >= start && d <= end {
            bars_by_date.entry(d).or_default().push(*bar);
        }
    }

    let mut out = AlignedRaw {
        start_date: start,
        end_date: end,
        bars: Vec::new(),
        epi: Vec::new(),
    };
    let mut day = start;
    loop {
        let rec = epi_by_date.get(&day).ok_or(IngestError::MissingEpiDay(day))?;
        let day_bars = bars_by_date
            .remove(&day)
            .ok_or(IngestError::MissingMarketDay(day))?;
        out.epi.push(**rec);
        out.bars.push(day_bars);
        if day == end {
            break;
        }
        day = day + Days::new(1);
    }
    for (date, n) in out.bar_counts() {
        log::debug!("{date}: {n} minute bars");
    }
    Ok(out)
}
