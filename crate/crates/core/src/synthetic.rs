//! Seeded synthetic data for tests, demos and offline runs. Nothing here
//! is market or epidemiological data.

use std::io::Write;

use chrono::{Days, NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::features::{FeatureError, FeatureFrame, TARGET_COLUMN};
use crate::ingest::{write_minute_bars, IngestError, MinuteBar, EPI_CSV_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct RawFixtureSpec {
    pub start: NaiveDate,
    /// Inclusive day count.
    pub days: usize,
    pub bars_per_day: usize,
    pub seed: u64,
}

impl Default for RawFixtureSpec {
    fn default() -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(2020, 1, 6).expect("valid date"),
            days: 244,
            bars_per_day: 24,
            seed: 2020,
        }
    }
}

/// Cumulative counts for one synthetic country, per day.
struct Country {
    code: &'static str,
    name: &'static str,
    cases: Vec<u64>,
    deaths: Vec<u64>,
}

fn logistic_curve(days: usize, ceiling: f64, midpoint: f64, scale: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(days);
    for t in 0..days {
        let base = ceiling / (1.0 + (-(t as f64 - midpoint) / scale).exp());
        let jitter: f64 = rng.random_range(0.97..1.03);
        let v = (base * jitter).round() as u64;
        let prev = out.last().copied().unwrap_or(0);
        out.push(v.max(prev));
    }
    out
}

fn countries(spec: &RawFixtureSpec, rng: &mut ChaCha8Rng) -> Vec<Country> {
    let mut make = |code, name, ceiling, mid, scale| {
        let cases = logistic_curve(spec.days, ceiling, mid, scale, rng);
        let deaths = (0..spec.days).map(|t| (cases[t.saturating_sub(10)] as f64 * 0.035).round() as u64).collect();
        Country { code, name, cases, deaths }
    };
    vec![
        make("XA", "Synthetic Alpha", 2.0e6, 85.0, 11.0),
        make("XB", "Synthetic Beta", 1.2e6, 150.0, 18.0),
    ]
}

/// Write a minute-candle CSV and a WHO-layout epi CSV covering
/// `spec.days` days. Price returns respond to lagged case growth.
pub fn write_raw_fixture<M: Write, E: Write>(spec: &RawFixtureSpec, minute: M, epi: E) -> Result<(), IngestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let countries = countries(spec, &mut rng);

    let mut w = csv::Writer::from_writer(epi);
    w.write_record(EPI_CSV_HEADER)?;
    for t in 0..spec.days {
        let date = spec.start + Days::new(t as u64);
        for c in &countries {
            let prev = |v: &[u64]| if t == 0 { 0 } else { v[t - 1] };
            w.write_record([
                date.to_string(),
                c.code.to_string(),
                c.name.to_string(),
                "OTHER".to_string(),
                (c.cases[t] - prev(&c.cases)).to_string(),
                c.cases[t].to_string(),
                (c.deaths[t] - prev(&c.deaths)).to_string(),
                c.deaths[t].to_string(),
            ])?;
        }
    }
    w.flush()?;

    let total_new: Vec<f64> = (0..spec.days)
        .map(|t| {
            countries.iter().map(|c| (c.cases[t] - if t == 0 { 0 } else { c.cases[t - 1] }) as f64).sum()
        })
        .collect();
    let mut bars = Vec::with_capacity(spec.days * spec.bars_per_day);
    let mut price: f64 = 7350.0;
    let k = spec.bars_per_day;
    for t in 0..spec.days {
        let growth = if t >= 3 { ((1.0 + total_new[t - 2]) / (1.0 + total_new[t - 3])).ln() } else { 0.0 };
        let z: f64 = rng.sample(StandardNormal);
        let ret = 0.0015 + 0.025 * z - 0.12 * growth.clamp(-1.0, 1.0);
        let open = price;
        let close = open * ret.exp();
        // bridge from open to close in log space
        let steps: Vec<f64> = (0..k).map(|_| 0.004 * rng.sample::<f64, _>(StandardNormal)).collect();
        let walk_end: f64 = steps.iter().sum();
        let mut walk = 0.0;
        let mut path = Vec::with_capacity(k + 1);
        path.push(open);
        for (i, s) in steps.iter().enumerate() {
            walk += s;
            let frac = (i + 1) as f64 / k as f64;
            path.push(open * ((close / open).ln() * frac + walk - frac * walk_end).exp());
        }
        let day_ms = (spec.start + Days::new(t as u64)).and_time(NaiveTime::MIN).and_utc().timestamp_millis();
        let gap = (1440 / k.max(1)) as i64;
        for i in 0..k {
            let (o, c) = (round2(path[i]), round2(path[i + 1]));
            let wick: f64 = rng.random_range(0.0..0.0015);
            let volume: f64 = (2.0 + 0.6 * rng.sample::<f64, _>(StandardNormal)).exp();
            bars.push(MinuteBar {
                ts: day_ms + i as i64 * gap * 60_000,
                open: o,
                close: c,
                high: round2(o.max(c) * (1.0 + wick)),
                low: round2(o.min(c) * (1.0 - wick)),
                volume: (volume * 1e4).round() / 1e4,
            });
        }
        price = round2(path[k]);
    }
    write_minute_bars(minute, &bars)
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Daily frame where the close follows
/// `x_t = 0.8 x_{t-1} + coupling * e_{t-3} + 0.1 * noise` and `new_cases`
/// carries `e_t`. Volume and deaths are pure noise.
pub fn coupled_frame(days: usize, coupling: f64, seed: u64) -> Result<FeatureFrame, FeatureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let exog: Vec<f64> = (0..days + 1).map(|_| normal()).collect();
    let mut x = vec![0.0; days + 1];
    for t in 1..=days {
        let lagged = if t >= 3 { exog[t - 3] } else { 0.0 };
        x[t] = 0.8 * x[t - 1] + coupling * lagged + 0.1 * normal();
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut values = Vec::with_capacity(days * 5);
    for t in 0..days {
        values.extend([x[t], normal(), exog[t], normal(), x[t + 1]]);
    }
    FeatureFrame::new(
        (0..days).map(|t| start + Days::new(t as u64)).collect(),
        ["btc_close", "btc_volume", "new_cases", "new_deaths", TARGET_COLUMN].map(String::from).to_vec(),
        values,
        TARGET_COLUMN,
    )
}
