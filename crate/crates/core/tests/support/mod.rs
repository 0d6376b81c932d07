//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use counterpoint::learners::{TreeNode, TreeParams};
use counterpoint::rng::seeded;
use counterpoint::{FeatureMatrix, HOUR};
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Random SPD matrix `A·Aᵀ/p + 0.2·I`.
pub fn random_spd(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    let a = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
    &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.2
}

fn log_det(w: &DMatrix<f64>) -> Option<f64> {
    let chol = w.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Glasso objective `log det Θ − tr(SΘ) − λ Σ_{i≠j} |Θ_ij|`, written out
/// separately from the library's.
pub fn objective(s: &DMatrix<f64>, theta: &DMatrix<f64>, lambda: f64) -> f64 {
    let Some(ld) = log_det(theta) else {
        return f64::NEG_INFINITY;
    };
    let p = s.nrows();
    let tr = (s * theta).trace();
    let off: f64 = (0..p)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| theta[(i, j)].abs())
        .sum();
    ld - tr - lambda * off
}

pub struct DualSolution {
    pub theta: DMatrix<f64>,
    /// Primal objective of `theta`.
    pub primal: f64,
    /// Upper bound on the optimum: `−log det W − p`.
    pub bound: f64,
}

/// Projected gradient ascent on the dual
/// `max log det W  s.t. W_ii = S_ii, |W_ij − S_ij| ≤ λ`, with Θ = W⁻¹.
///
/// Every iterate is dual feasible, so `bound − primal` certifies how far
/// `primal` is from optimal.
pub fn glasso_dual_pg(s: &DMatrix<f64>, lambda: f64, gap_tol: f64) -> DualSolution {
    let p = s.nrows();
    let project = |w: &DMatrix<f64>| {
        DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                s[(i, i)]
            } else {
                let v = 0.5 * (w[(i, j)] + w[(j, i)]);
                v.clamp(s[(i, j)] - lambda, s[(i, j)] + lambda)
            }
        })
    };
    let mut w = s.clone();
    let mut f = log_det(&w).expect("S must be positive definite");
    let mut step = 1.0;
    let mut best = None::<DualSolution>;
    for _ in 0..200_000 {
        let g = w.clone().try_inverse().expect("W stays positive definite");
        let theta = g.clone();
        let primal = objective(s, &theta, lambda);
        let bound = -f - p as f64;
        let done = bound - primal < gap_tol;
        best = Some(DualSolution {
            theta,
            primal,
            bound,
        });
        if done {
            break;
        }
        step *= 2.0;
        loop {
            let cand = project(&(&w + &g * step));
            let d = &cand - &w;
            if let Some(fc) = log_det(&cand) {
                if fc >= f + g.dot(&d) - d.norm_squared() / (2.0 * step) {
                    w = cand;
                    f = fc;
                    break;
                }
            }
            step *= 0.5;
            assert!(step > 1e-300, "line search failed");
        }
    }
    best.unwrap()
}

/// `n` draws from a zero-mean Gaussian with tridiagonal precision (chain
/// graph over `p` variables), as an hourly feature matrix.
pub fn chain_samples(p: usize, n: usize, off_diag: f64, seed: u64) -> (DMatrix<f64>, FeatureMatrix) {
    let theta = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if i.abs_diff(j) == 1 {
            off_diag
        } else {
            0.0
        }
    });
    let sigma = theta.clone().try_inverse().unwrap();
    let l = sigma.cholesky().unwrap().l();
    let mut rng = seeded(seed);
    let mut cols = vec![Vec::with_capacity(n); p];
    for _ in 0..n {
        let z = nalgebra::DVector::<f64>::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let x = &l * z;
        for (c, v) in cols.iter_mut().zip(x.iter()) {
            c.push(*v);
        }
    }
    let index = (0..n as i64).map(|h| 1_600_000_000 / HOUR * HOUR + h * HOUR).collect();
    let m = FeatureMatrix::from_columns(
        index,
        cols.into_iter().enumerate().map(|(j, c)| (format!("x{j}"), c)),
    )
    .unwrap();
    (theta, m)
}

/// Greedy CART by exhaustive search: every feature, every midpoint between
/// consecutive distinct values, scored by total squared error of the two
/// children. Ties go to the lower feature, then the lower threshold.
pub fn brute_force_tree(x: &DMatrix<f64>, y: &[f64], rows: &[usize], params: TreeParams, depth: usize) -> TreeNode {
    let mean = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    let leaf = TreeNode::Leaf { value: mean };
    let constant = rows.iter().all(|&r| y[r] == y[rows[0]]);
    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf || constant {
        return leaf;
    }
    let sse = |rs: &[usize]| {
        let m = rs.iter().map(|&r| y[r]).sum::<f64>() / rs.len() as f64;
        rs.iter().map(|&r| (y[r] - m).powi(2)).sum::<f64>()
    };
    let parent = sse(rows);
    let mut best: Option<(f64, usize, f64)> = None;
    for j in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x[(r, j)]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[(r, j)] <= thr);
            if l.len() < params.min_leaf || r.len() < params.min_leaf {
                continue;
            }
            let score = sse(&l) + sse(&r);
            // Require a real improvement, with slack for rounding.
            if score >= parent - 1e-12 * parent.abs().max(1.0) {
                continue;
            }
            if best.is_none_or(|(b, _, _)| score < b - 1e-12 * b.abs().max(1.0)) {
                best = Some((score, j, thr));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return leaf;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| x[(r, feature)] <= threshold);
    TreeNode::Split {
        feature,
        threshold,
        left: Box::new(brute_force_tree(x, y, &l, params, depth + 1)),
        right: Box::new(brute_force_tree(x, y, &r, params, depth + 1)),
    }
}

/// `n × p` uniform features in `[0, 1)` and a noisy nonlinear target.
pub fn random_regression(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = seeded(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
    let y = (0..n)
        .map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1 % p)].powi(2) + 0.1 * rng.random::<f64>())
        .collect();
    (x, y)
}
