//! Recover off-chain prices from on-chain market activity.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingest`] loads block, transaction, pool and candle CSVs and defines the
//!   remote-source adapter contract.
//! - [`timeseries`] holds the hourly grid, smoothing, normalization and joins.
//! - [`features`] derives network, Uniswap and economic features per hour.
//! - [`graphical`] estimates sparse precision matrices and stability graphs.
//! - [`mutualinfo`] measures histogram mutual information against price.
//! - [`learners`] fits OLS, CART, random forest and boosting models and runs
//!   the rolling retraining evaluation.
//! - [`export`] quantizes a forest to an integer-only mapping table.
//! - [`synth`] generates synthetic markets where price is recoverable by
//!   construction.
//! - [`pipeline`] wires the stages together behind a single config file.

pub mod error;
pub mod export;
pub mod features;
pub mod graphical;
pub mod ingest;
pub mod learners;
pub mod mutualinfo;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod timeseries;

pub use error::{Error, Result};
pub use timeseries::{FeatureMatrix, TimeSeries, HOUR};
