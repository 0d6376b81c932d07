use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares fit `y ≈ Xβ + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Numerical rank of the centered design.
    pub rank: usize,
    /// Set when the design was rank deficient and the minimum-norm solution
    /// was returned.
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict_row(&self, row: impl Iterator<Item = f64>) -> f64 {
        self.intercept
            + row
                .zip(&self.coefficients)
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }
}

/// Ordinary least squares via the SVD of the centered design.
///
/// Rank-deficient designs get the minimum-norm solution and are flagged.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<LinearModel> {
    let (n, p) = x.shape();
    if n == 0 {
        return Err(Error::NoRecords);
    }
    if y.len() != n {
        return Err(Error::LengthMismatch(y.len(), n));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    if p == 0 {
        return Ok(LinearModel {
            coefficients: vec![],
            intercept: y_mean,
            rank: 0,
            rank_deficient: false,
        });
    }
    let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let svd = xc.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * n.max(p) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = if rank == 0 {
        DVector::zeros(p)
    } else {
        svd.solve(&yc, eps).map_err(|e| Error::param("X", e.to_string()))?
    };

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - coefficients
            .iter()
            .zip(&x_mean)
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(LinearModel {
        coefficients,
        intercept,
        rank,
        rank_deficient: rank < p,
    })
}
