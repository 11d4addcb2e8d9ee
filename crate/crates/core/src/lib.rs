//! Next-day price forecasting with exogenous daily series.
//!
//! Minute candles and daily epidemiological counts are merged into one row
//! per day, expanded with intraday and trailing-window moments, screened by
//! random-forest importance and Pearson significance, and fed to a
//! single-layer LSTM. The `pipeline` module runs the paired experiment with
//! and without the exogenous columns.

pub mod ingest;
pub mod stats;
pub mod features;
pub mod forest;
pub mod select;
pub mod lstm;
pub mod pipeline;
pub mod synthetic;
