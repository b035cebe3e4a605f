//! Shape and time distortion loss (DILATE) for multi-step time series
//! forecasting.
//!
//! The crate bundles the soft-DTW dynamic-programming kernels ([`dp`]), the
//! trainable losses built on them ([`losses`]), evaluation metrics
//! ([`metrics`]), a small fully connected forecaster ([`models`]), dataset
//! tooling ([`data`]) and the experiment driver behind the `dilate` binary
//! ([`harness`]).

pub mod data;
pub mod dp;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod series;

pub use error::{Error, Result};
pub use series::{SquareMatrix, TimeSeries};
