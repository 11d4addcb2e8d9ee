//! Optional network download of the two raw sources.
//!
//! The HTTP layer is a trait so the pagination and retry logic can be driven
//! by an in-memory exchange in tests. The CLI supplies a real transport and
//! only when `--allow-network` is given.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Duration;

use chrono::{Days, NaiveDate};
use thiserror::Error;

use super::{write_minute_bars, IngestError, MinuteBar, EPI_CSV_HEADER};

pub const DEFAULT_CANDLES_BASE_URL: &str = "https://api-pub.bitfinex.com/v2";
pub const DEFAULT_WHO_CSV_URL: &str = "https://covid19.who.int/WHO-COVID-19-global-data.csv";
/// Maximum rows the candle endpoint returns per request.
pub const DEFAULT_PAGE_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("http error (status {status:?}): {message}")]
    Http { status: Option<u16>, message: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("provider returned {returned} of {requested} requested days")]
    TruncatedRange { requested: usize, returned: usize },
    #[error("unexpected payload: {0}")]
    Decode(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

pub trait HttpTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, FetchError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandleQuery {
    /// Exchange symbol, e.g. `tBTCUSD`.
    pub symbol: String,
    /// Candle width such as `1m`.
    pub granularity: String,
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteSource {
    Candles(CandleQuery),
    EpiCsv { url: String },
}

pub struct Fetcher<T> {
    transport: T,
    pub candles_base_url: String,
    pub page_limit: usize,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    sleep: Box<dyn Fn(Duration) + Send + Sync>,
}

impl<T: HttpTransport> Fetcher<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            candles_base_url: DEFAULT_CANDLES_BASE_URL.to_string(),
            page_limit: DEFAULT_PAGE_LIMIT,
            max_attempts: 5,
            initial_backoff: Duration::from_secs(2),
            sleep: Box::new(std::thread::sleep),
        }
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    /// Download `source` and write it to `sink` in the local CSV layout.
    /// Returns the number of bytes written.
    pub fn fetch_remote(&self, source: &RemoteSource, sink: &mut dyn Write) -> Result<u64, FetchError> {
        let mut counting = CountingWriter { inner: sink, count: 0 };
        match source {
            RemoteSource::Candles(query) => {
                let bars = self.fetch_candles(query)?;
                write_minute_bars(&mut counting, &bars)?;
            }
            RemoteSource::EpiCsv { url } => {
                let body = self.get_with_retry(url)?;
                check_epi_header(&body)?;
                counting.write_all(&body)?;
            }
        }
        counting.flush()?;
        Ok(counting.count)
    }

    pub fn fetch_candles(&self, query: &CandleQuery) -> Result<Vec<MinuteBar>, FetchError> {
        if query.start > query.end {
            return Err(IngestError::EmptyRange { start: query.start, end: query.end }.into());
        }
        let step = granularity_ms(&query.granularity)?;
        let start_ms = day_start_ms(query.start);
        let end_ms = day_start_ms(query.end + Days::new(1)) - 1;

        let mut bars: Vec<MinuteBar> = Vec::new();
        let mut cursor = start_ms;
        loop {
            let url = format!(
                "{}/candles/trade:{}:{}/hist?start={cursor}&end={end_ms}&limit={}&sort=1",
                self.candles_base_url, query.granularity, query.symbol, self.page_limit
            );
            let body = self.get_with_retry(&url)?;
            let page = decode_candle_page(&body)?;
            let Some(page_last) = page.iter().map(|b| b.ts).max() else {
                break;
            };
            for bar in page {
                if bar.ts < cursor || bar.ts > end_ms {
                    continue;
                }
                if bars.last().is_some_and(|b| b.ts >= bar.ts) {
                    continue;
                }
                bar.validate().map_err(FetchError::Decode)?;
                bars.push(bar);
            }
            // Providers may cap pages below the requested limit, so only an
            // empty page or reaching `end` terminates.
            if page_last + step > end_ms || page_last < cursor {
                break;
            }
            cursor = page_last + 1;
        }

        let requested = (query.end - query.start).num_days() as usize + 1;
        let returned = bars.iter().map(MinuteBar::date).collect::<BTreeSet<_>>().len();
        if returned < requested {
            return Err(FetchError::TruncatedRange { requested, returned });
        }
        Ok(bars)
    }

    fn get_with_retry(&self, url: &str) -> Result<Vec<u8>, FetchError> {
        let mut backoff = self.initial_backoff;
        for attempt in 1..=self.max_attempts {
            let resp = self.transport.get(url)?;
            match resp.status {
                200..=299 => return Ok(resp.body),
                429 => {
                    log::warn!("rate limited (attempt {attempt}/{}), backing off {backoff:?}", self.max_attempts);
                    if attempt < self.max_attempts {
                        (self.sleep)(backoff);
                        backoff *= 2;
                    }
                }
                status => {
                    return Err(FetchError::Http {
                        status: Some(status),
                        message: String::from_utf8_lossy(&resp.body).chars().take(200).collect(),
                    })
                }
            }
        }
        Err(FetchError::RateLimited { attempts: self.max_attempts })
    }
}

fn day_start_ms(d: NaiveDate) -> i64 {
    d.and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp_millis()
}

fn granularity_ms(g: &str) -> Result<i64, FetchError> {
    let split = g.find(|c: char| !c.is_ascii_digit()).unwrap_or(g.len());
    let (n, unit) = g.split_at(split);
    let n: i64 = n
        .parse()
        .map_err(|_| FetchError::Decode(format!("bad granularity {g:?}")))?;
    let unit_ms = match unit {
        "m" => 60_000,
        "h" => 3_600_000,
        "D" => 86_400_000,
        _ => return Err(FetchError::Decode(format!("bad granularity {g:?}"))),
    };
    Ok(n * unit_ms)
}

/// Candle rows arrive as `[MTS, OPEN, CLOSE, HIGH, LOW, VOLUME]`.
fn decode_candle_page(body: &[u8]) -> Result<Vec<MinuteBar>, FetchError> {
    let rows: Vec<Vec<serde_json::Value>> =
        serde_json::from_slice(body).map_err(|e| FetchError::Decode(e.to_string()))?;
    rows.into_iter()
        .map(|row| {
            let num = |i: usize| {
                row.get(i)
                    .and_then(serde_json::Value::as_f64)
                    .ok_or_else(|| FetchError::Decode(format!("candle row {row:?}")))
            };
            let ts = row
                .first()
                .and_then(serde_json::Value::as_i64)
                .ok_or_else(|| FetchError::Decode(format!("candle row {row:?}")))?;
            Ok(MinuteBar {
                ts,
                open: num(1)?,
                close: num(2)?,
                high: num(3)?,
                low: num(4)?,
                volume: num(5)?,
            })
        })
        .collect()
}

fn check_epi_header(body: &[u8]) -> Result<(), FetchError> {
    let first = body.split(|&b| b == b'\n').next().unwrap_or_default();
    let line = String::from_utf8_lossy(first);
    let names: Vec<&str> = line
        .trim_start_matches('\u{feff}')
        .trim_end()
        .split(',')
        .map(str::trim)
        .collect();
    if names != EPI_CSV_HEADER {
        return Err(FetchError::Decode(format!("unexpected epi header {line:?}")));
    }
    Ok(())
}

struct CountingWriter<'a> {
    inner: &'a mut dyn Write,
    count: u64,
}

impl Write for CountingWriter<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
