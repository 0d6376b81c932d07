//! Price regressors and the rolling retraining harness.

mod boost;
mod forest;
mod ols;
mod rolling;
mod tree;

pub use boost::{fit_gboost, fit_gboost_traced, BoostModel, BoostParams};
pub use forest::{fit_forest, ForestModel, ForestParams, TrainingMeta};
pub use ols::{fit_ols, LinearModel};
pub use rolling::{
    predictions_csv, rolling_evaluate, Horizon, RollingEvalReport, RollingParams, Window,
};
pub use tree::{fit_tree, grow, FeatureSampler, Presorted, TreeNode, TreeParams};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which learner to fit, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Ols,
    Tree(TreeParams),
    Forest(ForestParams),
    Gboost(BoostParams),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Forest(ForestParams::default())
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ols => "ols",
            ModelSpec::Tree(_) => "tree",
            ModelSpec::Forest(_) => "forest",
            ModelSpec::Gboost(_) => "gboost",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Ols => Ok(()),
            ModelSpec::Tree(p) => validate_tree(p),
            ModelSpec::Forest(p) => p.validate(),
            ModelSpec::Gboost(p) => p.validate(),
        }
    }

    pub fn fit(&self, x: &DMatrix<f64>, y: &[f64], seed: u64) -> Result<Model> {
        Ok(match self {
            ModelSpec::Ols => Model::Linear(fit_ols(x, y)?),
            ModelSpec::Tree(p) => Model::Tree {
                root: fit_tree(x, y, *p)?,
                n_features: x.ncols(),
            },
            ModelSpec::Forest(p) => Model::Forest(fit_forest(x, y, p, seed)?),
            ModelSpec::Gboost(p) => Model::Boost(fit_gboost(x, y, p)?),
        })
    }
}

pub(crate) fn validate_tree(p: &TreeParams) -> Result<()> {
    if p.min_leaf == 0 {
        return Err(Error::param("min_leaf", "must be at least 1"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Tree { root: TreeNode, n_features: usize },
    Forest(ForestModel),
    Boost(BoostModel),
}

impl Model {
    pub fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.coefficients.len(),
            Model::Tree { n_features, .. } => *n_features,
            Model::Forest(m) => m.feature_names.len(),
            Model::Boost(m) => m.n_features,
        }
    }

    fn predict_one(&self, x: &DMatrix<f64>, r: usize) -> f64 {
        let row = |f: usize| x[(r, f)];
        match self {
            Model::Linear(m) => m.predict_row((0..x.ncols()).map(row)),
            Model::Tree { root, .. } => root.predict(&row),
            Model::Forest(m) => m.predict_row(&row),
            Model::Boost(m) => m.predict_row(&row),
        }
    }
}

/// Predicts every row of `x`.
pub fn predict(model: &Model, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::ArityMismatch {
            expected: model.n_features(),
            got: x.ncols(),
        });
    }
    Ok((0..x.nrows()).map(|r| model.predict_one(x, r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mape: f64,
    pub r2: f64,
}

impl Metrics {
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Self {
        Self {
            rmse: rmse(actual, predicted),
            mape: mape(actual, predicted),
            r2: r2(actual, predicted),
        }
    }
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> f64 {
    if actual.is_empty() {
        return f64::NAN;
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    (sse / actual.len() as f64).sqrt()
}

/// Mean absolute percentage error as a ratio; actuals below 1 are skipped.
pub fn mape(actual: &[f64], predicted: &[f64]) -> f64 {
    let (sum, n) = actual
        .iter()
        .zip(predicted)
        .filter(|(a, _)| **a >= 1.0)
        .fold((0.0, 0usize), |(s, n), (a, p)| (s + ((a - p) / a).abs(), n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Coefficient of determination against the mean of `actual`; NaN when
/// `actual` is constant.
pub fn r2(actual: &[f64], predicted: &[f64]) -> f64 {
    if actual.is_empty() {
        return f64::NAN;
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let sst: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if sst == 0.0 {
        return f64::NAN;
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    1.0 - sse / sst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_round_trips_through_toml() {
        let spec: ModelSpec = toml::from_str("kind = \"forest\"\nn_trees = 7").unwrap();
        let ModelSpec::Forest(p) = &spec else { panic!() };
        assert_eq!(p.n_trees, 7);
        assert_eq!(p.max_depth, ForestParams::default().max_depth);
        let back: ModelSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        let ols: ModelSpec = toml::from_str("kind = \"ols\"").unwrap();
        assert_eq!(ols, ModelSpec::Ols);
    }

    #[test]
    fn arity_mismatch_errors() {
        let x = DMatrix::from_fn(10, 2, |r, c| (r * (c + 1)) as f64);
        let y: Vec<f64> = (0..10).map(|r| r as f64).collect();
        let m = ModelSpec::Ols.fit(&x, &y, 0).unwrap();
        let bad = DMatrix::zeros(3, 3);
        assert!(matches!(
            predict(&m, &bad),
            Err(Error::ArityMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn metric_values() {
        let a = [1.0, 2.0, 3.0, 0.5];
        let p = [1.0, 2.0, 4.0, 0.0];
        assert!((rmse(&a, &p) - (1.25f64 / 4.0).sqrt()).abs() < 1e-15);
        assert!((mape(&a, &p) - (1.0 / 3.0) / 3.0).abs() < 1e-15);
        assert!(r2(&[2.0, 2.0], &[2.0, 2.0]).is_nan());
        assert_eq!(r2(&a, &a), 1.0);
    }
}
