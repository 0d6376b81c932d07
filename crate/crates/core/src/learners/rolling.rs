//! Walk-forward evaluation with periodic retraining.
//!
//! Window `w` starts at `t_w = t_0 + (min_train + w·c)` hours. Its model is
//! trained on every row stamped before `t_w` (optionally only the last
//! `max_train_hours` of them) and tested on the `c` hourly rows from `t_w`
//! onward. With hourly rows numbered from 1 this is training on `≤ t` and
//! testing on `(t, t + c]`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{predict, Metrics, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::mix;
use crate::timeseries::{fmt_f64, FeatureMatrix, NormalizationStats, HOUR};

/// Retraining cadences reported by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Day,
    Week,
    Month,
}

impl Horizon {
    pub const ALL: [Horizon; 3] = [Horizon::Day, Horizon::Week, Horizon::Month];

    pub fn hours(self) -> usize {
        match self {
            Horizon::Day => 24,
            Horizon::Week => 168,
            Horizon::Month => 720,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingParams {
    pub horizon_hours: usize,
    pub min_train_hours: usize,
    /// Train on at most this many trailing hours instead of all history.
    pub max_train_hours: Option<usize>,
    pub model: ModelSpec,
    pub seed: u64,
}

impl Default for RollingParams {
    fn default() -> Self {
        Self {
            horizon_hours: 24,
            min_train_hours: 30 * 24,
            max_train_hours: None,
            model: ModelSpec::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub id: usize,
    /// Training covers `[train_start, train_end)`.
    pub train_start: i64,
    pub train_end: i64,
    /// Testing covers `[train_end, test_end)`.
    pub test_end: i64,
    pub train_rows: usize,
    pub last_train_timestamp: i64,
    pub normalization: NormalizationStats,
    pub timestamps: Vec<i64>,
    pub actuals: Vec<f64>,
    pub predictions: Vec<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingEvalReport {
    pub horizon_hours: usize,
    pub model: String,
    pub windows: Vec<Window>,
    /// Metrics over all out-of-sample predictions concatenated.
    pub metrics: Metrics,
    /// Median of the per-window r2 values that are defined.
    pub median_window_r2: f64,
}

impl RollingEvalReport {
    pub fn actuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.windows.iter().flat_map(|w| w.actuals.iter().copied())
    }

    pub fn predictions(&self) -> impl Iterator<Item = f64> + '_ {
        self.windows.iter().flat_map(|w| w.predictions.iter().copied())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Runs the walk-forward evaluation of `params.model` predicting `price`
/// (aligned with the rows of `features`).
pub fn rolling_evaluate(
    features: &FeatureMatrix,
    price: &[f64],
    params: &RollingParams,
) -> Result<RollingEvalReport> {
    params.model.validate()?;
    if params.horizon_hours == 0 {
        return Err(Error::param("horizon_hours", "must be positive"));
    }
    if price.len() != features.n_rows() {
        return Err(Error::LengthMismatch(price.len(), features.n_rows()));
    }
    if features.has_nan() || price.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidSeries("NaN in rolling evaluation input".into()));
    }
    let index = features.index();
    let (Some(&first), Some(&last)) = (index.first(), index.last()) else {
        return Err(Error::NoRecords);
    };
    let total_hours = ((last - first) / HOUR + 1) as usize;
    if total_hours <= params.min_train_hours + params.horizon_hours {
        return Err(Error::param(
            "min_train_hours",
            format!(
                "{total_hours} hours of data do not cover {} training plus a {}h horizon",
                params.min_train_hours, params.horizon_hours
            ),
        ));
    }

    let mut bounds = Vec::new();
    let mut t = first + (params.min_train_hours * HOUR as usize) as i64;
    let step = (params.horizon_hours * HOUR as usize) as i64;
    while t <= last {
        bounds.push(t);
        t += step;
    }

    let windows: Vec<Option<Window>> = bounds
        .par_iter()
        .enumerate()
        .map(|(w, &t_w)| {
            evaluate_window(features, price, params, w, t_w, t_w + step)
                .map_err(|e| Error::Fold {
                    fold: w,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let windows: Vec<Window> = windows.into_iter().flatten().collect();
    if windows.is_empty() {
        return Err(Error::NoRecords);
    }

    let actuals: Vec<f64> = windows.iter().flat_map(|w| w.actuals.clone()).collect();
    let predictions: Vec<f64> = windows.iter().flat_map(|w| w.predictions.clone()).collect();
    let median_window_r2 = median(
        windows
            .iter()
            .map(|w| w.metrics.r2)
            .filter(|r| !r.is_nan())
            .collect(),
    );
    Ok(RollingEvalReport {
        horizon_hours: params.horizon_hours,
        model: params.model.name().to_string(),
        metrics: Metrics::compute(&actuals, &predictions),
        windows,
        median_window_r2,
    })
}

fn evaluate_window(
    features: &FeatureMatrix,
    price: &[f64],
    params: &RollingParams,
    id: usize,
    train_end: i64,
    test_end: i64,
) -> Result<Option<Window>> {
    let index = features.index();
    let train_start = match params.max_train_hours {
        Some(h) => train_end - (h * HOUR as usize) as i64,
        None => i64::MIN,
    };
    let test: Vec<usize> = (0..index.len())
        .filter(|&i| index[i] >= train_end && index[i] < test_end)
        .collect();
    if test.is_empty() {
        log::warn!("window {id}: empty test range, skipped");
        return Ok(None);
    }
    let train: Vec<usize> = (0..index.len())
        .filter(|&i| index[i] >= train_start && index[i] < train_end)
        .collect();
    let train_m = features.filter_rows(|i| index[i] >= train_start && index[i] < train_end);
    let test_m = features.filter_rows(|i| index[i] >= train_end && index[i] < test_end);

    let normalization = NormalizationStats::fit(&train_m)?;
    let x_train = normalization.apply(&train_m)?.to_dmatrix();
    let x_test = normalization.apply(&test_m)?.to_dmatrix();
    let y_train: Vec<f64> = train.iter().map(|&i| price[i]).collect();
    let actuals: Vec<f64> = test.iter().map(|&i| price[i]).collect();

    let model = params.model.fit(&x_train, &y_train, mix(params.seed, id as u64))?;
    let predictions = predict(&model, &x_test)?;
    Ok(Some(Window {
        id,
        train_start: train_m.index()[0],
        train_end,
        test_end,
        train_rows: train.len(),
        last_train_timestamp: *train_m.index().last().expect("non-empty after fit"),
        normalization,
        timestamps: test_m.index().to_vec(),
        metrics: Metrics::compute(&actuals, &predictions),
        actuals,
        predictions,
    }))
}

/// `timestamp,actual,predicted,window_id` rows for every test prediction.
pub fn predictions_csv(report: &RollingEvalReport) -> String {
    let mut out = String::from("timestamp,actual,predicted,window_id\n");
    for w in &report.windows {
        for i in 0..w.timestamps.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                w.timestamps[i],
                fmt_f64(w.actuals[i]),
                fmt_f64(w.predictions[i]),
                w.id
            );
        }
    }
    out
}
