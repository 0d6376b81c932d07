//! Sparse inverse covariance (graphical lasso), partial correlations and
//! fold-smoothed dependency graphs.
//!
//! The solver maximizes
//!
//! ```text
//! log det Θ − tr(SΘ) − λ Σ_{i≠j} |Θ_ij|
//! ```
//!
//! by block coordinate ascent over columns of Θ. With every other column held
//! fixed, the optimal diagonal entry has a closed form and the off-diagonal
//! column solves a lasso problem, which is handled by cyclic coordinate
//! descent. Each block step is an exact maximization, so Θ stays positive
//! definite and the objective never decreases between sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{fmt_f64, zscore_normalize, FeatureMatrix};

/// Sample covariance `XᵀX / (n−1)` of the centered columns.
pub fn empirical_covariance(m: &FeatureMatrix) -> Result<DMatrix<f64>> {
    let n = m.n_rows();
    if n < 2 {
        return Err(Error::param("rows", format!("need at least 2 rows, got {n}")));
    }
    if m.has_nan() {
        return Err(Error::InvalidSeries("NaN in covariance input".into()));
    }
    let centered: Vec<Vec<f64>> = m
        .columns()
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let p = centered.len();
    let mut s = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (n - 1) as f64;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `log det Θ − tr(SΘ) − λ Σ_{i≠j} |Θ_ij|`, or `−∞` when Θ is not positive
/// definite.
pub fn glasso_objective(s: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let Some(chol) = theta.clone().cholesky() else {
        return f64::NEG_INFINITY;
    };
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let p = s.nrows();
    let mut trace = 0.0;
    let mut penalty = 0.0;
    for i in 0..p {
        for j in 0..p {
            trace += s[(i, j)] * theta[(i, j)];
            if i != j {
                penalty += theta[(i, j)].abs();
            }
        }
    }
    log_det - trace - lambda * penalty
}

#[derive(Debug, Clone)]
pub struct GlassoFit {
    pub precision: DMatrix<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective before the first sweep and after each sweep.
    pub objective_trace: Vec<f64>,
}

impl GlassoFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

fn soft_threshold(c: f64, lambda: f64) -> f64 {
    c.signum() * (c.abs() - lambda).max(0.0)
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::param("S", "matrix is not square"));
    }
    let p = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in 0..i {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if !(worst <= 1e-9) {
        return Err(Error::NotSymmetric(worst));
    }
    Ok(())
}

/// Graphical lasso with an off-diagonal ℓ₁ penalty.
///
/// Stops once no entry of Θ moves by more than `tol` during a sweep, or after
/// `max_iter` sweeps with `converged = false`.
pub fn graphical_lasso(
    s: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<GlassoFit> {
    check_symmetric(s)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("{lambda} must be finite and >= 0")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let p = s.nrows();
    if (0..p).any(|i| !(s[(i, i)] > 0.0)) {
        return Err(Error::param("S", "diagonal must be positive"));
    }

    let mut theta = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / s[(i, i)] } else { 0.0 });
    let mut w = DMatrix::from_fn(p, p, |i, j| if i == j { s[(i, i)] } else { 0.0 });
    let mut trace = vec![glasso_objective(s, &theta, lambda)];
    let inner_tol = tol * 0.1;

    let mut converged = p <= 1;
    let mut sweeps = 0;
    while !converged && sweeps < max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let m = others.len();
            let s22 = s[(j, j)];
            // A = Θ₁₁⁻¹ from the current inverse W = Θ⁻¹.
            let w22 = w[(j, j)];
            let a = DMatrix::from_fn(m, m, |k, l| {
                let (ik, il) = (others[k], others[l]);
                w[(ik, il)] - w[(ik, j)] * w[(il, j)] / w22
            });
            let s12: Vec<f64> = others.iter().map(|&k| s[(k, j)]).collect();
            let mut beta: Vec<f64> = others.iter().map(|&k| theta[(k, j)]).collect();

            // min ½ βᵀ(s₂₂A)β + s₁₂ᵀβ + λ‖β‖₁
            for _ in 0..10_000 {
                let mut delta = 0.0f64;
                for k in 0..m {
                    let mut c = s12[k];
                    for l in 0..m {
                        if l != k {
                            c += s22 * a[(k, l)] * beta[l];
                        }
                    }
                    let next = -soft_threshold(c, lambda) / (s22 * a[(k, k)]);
                    delta = delta.max((next - beta[k]).abs());
                    beta[k] = next;
                }
                if delta < inner_tol {
                    break;
                }
            }

            // u = Aβ; the Schur complement of the updated column is 1/s₂₂.
            let u: Vec<f64> = (0..m)
                .map(|k| (0..m).map(|l| a[(k, l)] * beta[l]).sum())
                .collect();
            let quad: f64 = beta.iter().zip(&u).map(|(b, u)| b * u).sum();
            let theta22 = 1.0 / s22 + quad;
            max_change = max_change.max((theta22 - theta[(j, j)]).abs());
            theta[(j, j)] = theta22;
            for (k, &ik) in others.iter().enumerate() {
                max_change = max_change.max((beta[k] - theta[(ik, j)]).abs());
                theta[(ik, j)] = beta[k];
                theta[(j, ik)] = beta[k];
            }

            for (k, &ik) in others.iter().enumerate() {
                for (l, &il) in others.iter().enumerate() {
                    w[(ik, il)] = a[(k, l)] + u[k] * u[l] * s22;
                }
                w[(ik, j)] = -u[k] * s22;
                w[(j, ik)] = -u[k] * s22;
            }
            w[(j, j)] = s22;
        }

        // Refresh W from Θ to stop rank-update drift.
        w = theta
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .inverse();
        trace.push(glasso_objective(s, &theta, lambda));
        converged = max_change < tol;
    }

    Ok(GlassoFit {
        precision: theta,
        converged,
        sweeps,
        objective_trace: trace,
    })
}

/// `ρ_ij = −Θ_ij / √(Θ_ii Θ_jj)` off the diagonal, 1 on it.
pub fn partial_correlations(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !theta.is_square() {
        return Err(Error::param("theta", "matrix is not square"));
    }
    let p = theta.nrows();
    if (0..p).any(|i| !(theta[(i, i)] > 0.0)) {
        return Err(Error::param("theta", "diagonal must be positive"));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (-theta[(i, j)] / (theta[(i, i)] * theta[(j, j)]).sqrt()).clamp(-1.0, 1.0)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    /// `2·√(ln p / n)` on each training subset.
    Auto,
    Fixed(f64),
}

impl Lambda {
    pub fn resolve(self, p: usize, n: usize) -> f64 {
        match self {
            Lambda::Fixed(v) => v,
            Lambda::Auto => 2.0 * ((p.max(2) as f64).ln() / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    /// Number of contiguous time folds.
    pub k: usize,
    pub lambda: Lambda,
    /// Minimum fraction of subsets agreeing on an edge.
    pub tau: f64,
    /// Edge-presence threshold on |partial correlation|.
    pub edge_eps: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            k: 5,
            lambda: Lambda::Auto,
            tau: 0.8,
            edge_eps: 0.05,
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::param("k", "need at least 2 folds"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::param("tau", format!("{} not in (0, 1]", self.tau)));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::param("lambda", format!("{l} must be >= 0")));
            }
        }
        if !(self.edge_eps >= 0.0) {
            return Err(Error::param("edge_eps", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub partial_corr: f64,
}

/// Fold-averaged dependency graph.
#[derive(Debug, Clone)]
pub struct PrecisionGraph {
    pub columns: Vec<String>,
    /// Mean of the subset precision matrices.
    pub precision: DMatrix<f64>,
    /// Mean of the subset partial correlations.
    pub partial_corr: DMatrix<f64>,
    /// Fraction of subsets in which each pair was an edge.
    pub weights: DMatrix<f64>,
    /// Pairs with weight ≥ tau, ordered by `(i, j)`, `i < j`.
    pub edges: Vec<Edge>,
    /// Folds whose fit hit `max_iter` without converging.
    pub unconverged_folds: Vec<usize>,
}

/// Leave-one-fold-out graphical lasso over contiguous time folds.
///
/// Each subset is normalized on its own rows before estimating covariance.
pub fn stability_graph(m: &FeatureMatrix, params: &GraphParams) -> Result<PrecisionGraph> {
    params.validate()?;
    let (n, p, k) = (m.n_rows(), m.n_cols(), params.k);
    if n < 2 * k {
        return Err(Error::param("rows", format!("need at least {} rows, got {n}", 2 * k)));
    }
    if p == 0 {
        return Err(Error::param("columns", "no columns"));
    }

    let bounds: Vec<(usize, usize)> = (0..k).map(|f| (f * n / k, (f + 1) * n / k)).collect();
    let fits = bounds
        .par_iter()
        .enumerate()
        .map(|(fold, &(lo, hi))| {
            let fit = || -> Result<(DMatrix<f64>, DMatrix<f64>, bool)> {
                let subset = m.filter_rows(|r| r < lo || r >= hi);
                let (z, stats) = zscore_normalize(&subset)?;
                if let Some(col) = stats.degenerate.first() {
                    return Err(Error::InvalidSeries(format!("column `{col}` is constant")));
                }
                let s = empirical_covariance(&z)?;
                let lambda = params.lambda.resolve(p, subset.n_rows());
                let g = graphical_lasso(&s, lambda, params.tol, params.max_iter)?;
                let pc = partial_correlations(&g.precision)?;
                Ok((g.precision, pc, g.converged))
            };
            fit().map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut precision = DMatrix::zeros(p, p);
    let mut partial_corr = DMatrix::zeros(p, p);
    let mut weights = DMatrix::zeros(p, p);
    let mut unconverged_folds = Vec::new();
    for (fold, (theta, pc, converged)) in fits.iter().enumerate() {
        if !converged {
            log::warn!("graphical lasso did not converge on fold {fold}");
            unconverged_folds.push(fold);
        }
        precision += theta;
        partial_corr += pc;
        for i in 0..p {
            for j in 0..p {
                if i != j && pc[(i, j)].abs() > params.edge_eps {
                    weights[(i, j)] += 1.0;
                }
            }
        }
    }
    let kf = k as f64;
    precision /= kf;
    partial_corr /= kf;
    weights /= kf;

    let mut edges = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            if weights[(i, j)] >= params.tau {
                edges.push(Edge {
                    i,
                    j,
                    weight: weights[(i, j)],
                    partial_corr: partial_corr[(i, j)],
                });
            }
        }
    }

    Ok(PrecisionGraph {
        columns: m.names().to_vec(),
        precision,
        partial_corr,
        weights,
        edges,
        unconverged_folds,
    })
}

/// Edge list as `src,dst,weight,partial_corr`.
pub fn edges_csv(g: &PrecisionGraph) -> String {
    let mut out = String::from("src,dst,weight,partial_corr\n");
    for e in &g.edges {
        writeln!(
            out,
            "{},{},{},{}",
            g.columns[e.i],
            g.columns[e.j],
            fmt_f64(e.weight),
            fmt_f64(e.partial_corr)
        )
        .unwrap();
    }
    out
}

/// Square matrix as `feature,<names...>` rows.
pub fn matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::from("feature");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..names.len() {
            write!(out, ",{}", fmt_f64(m[(i, j)])).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `graph_edges.csv` and `partial_corr.csv` into `dir`.
pub fn export_graph(g: &PrecisionGraph, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let edges = dir.join("graph_edges.csv");
    let matrix = dir.join("partial_corr.csv");
    std::fs::write(&edges, edges_csv(g)).map_err(|e| Error::io(&edges, e))?;
    std::fs::write(&matrix, matrix_csv(&g.columns, &g.partial_corr))
        .map_err(|e| Error::io(&matrix, e))?;
    Ok((edges, matrix))
}
