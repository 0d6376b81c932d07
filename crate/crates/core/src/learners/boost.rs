use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Presorted, TreeNode, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: 0.1,
            // Shallow trees are the usual boosting regime; deep ones overfit
            // the residuals within a few rounds.
            max_depth: 4,
            min_leaf: 5,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::param("learning_rate", "must lie in (0, 1]"));
        }
        super::validate_tree(&TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
}

impl BoostModel {
    pub fn predict_row(&self, row: &impl Fn(usize) -> f64) -> f64 {
        self.trees
            .iter()
            .fold(self.init, |acc, t| acc + self.learning_rate * t.predict(row))
    }
}

/// Least-squares gradient boosting with the per-round training SSE.
pub fn fit_gboost_traced(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &BoostParams,
) -> Result<(BoostModel, Vec<f64>)> {
    params.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::NoRecords);
    }
    if y.len() != n {
        return Err(Error::LengthMismatch(y.len(), n));
    }
    if n < params.min_leaf {
        return Err(Error::param(
            "min_leaf",
            format!("{n} rows is fewer than min_leaf {}", params.min_leaf),
        ));
    }
    let init = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![init; n];
    let sse = |f: &[f64]| y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut trace = vec![sse(&fitted)];
    let presorted = Presorted::new(x)?;
    let weights = vec![1u32; n];
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
    };
    let mut trees = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        let residual: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
        let tree = grow(x, &residual, &presorted, &weights, tree_params, None)?;
        for (r, f) in fitted.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict(&|c| x[(r, c)]);
        }
        trace.push(sse(&fitted));
        trees.push(tree);
    }
    Ok((
        BoostModel {
            init,
            learning_rate: params.learning_rate,
            trees,
            n_features: x.ncols(),
        },
        trace,
    ))
}

pub fn fit_gboost(x: &DMatrix<f64>, y: &[f64], params: &BoostParams) -> Result<BoostModel> {
    fit_gboost_traced(x, y, params).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(80, 2, |r, c| ((r * (c + 5) * 31) % 37) as f64);
        let y = (0..80).map(|r| (x[(r, 0)] / 6.0).sin() * 10.0 + x[(r, 1)]).collect();
        (x, y)
    }

    #[test]
    fn zero_rounds_predicts_mean() {
        let (x, y) = data();
        let params = BoostParams { n_rounds: 0, ..Default::default() };
        let m = fit_gboost(&x, &y, &params).unwrap();
        let mean = y.iter().sum::<f64>() / 80.0;
        assert_eq!(m.predict_row(&|c| x[(3, c)]), mean);
    }

    #[test]
    fn one_full_round_leaves_within_leaf_deviations() {
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0];
        let params = BoostParams {
            n_rounds: 1,
            learning_rate: 1.0,
            max_depth: usize::MAX,
            min_leaf: 1,
        };
        let m = fit_gboost(&x, &y, &params).unwrap();
        for r in 0..6 {
            assert!((m.predict_row(&|c| x[(r, c)]) - y[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn sse_non_increasing() {
        let (x, y) = data();
        let params = BoostParams { n_rounds: 40, ..Default::default() };
        let (_, trace) = fit_gboost_traced(&x, &y, &params).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{trace:?}");
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn learning_rate_bounds() {
        let (x, y) = data();
        for lr in [0.0, 1.5, f64::NAN] {
            let params = BoostParams { learning_rate: lr, ..Default::default() };
            assert!(fit_gboost(&x, &y, &params).is_err());
        }
    }
}
