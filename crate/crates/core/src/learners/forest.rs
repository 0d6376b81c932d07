use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow, FeatureSampler, Presorted, TreeNode, TreeParams};
use crate::error::{Error, Result};
use crate::rng::{mix, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_frac: f64,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            feature_frac: 1.0 / 3.0,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::param("n_trees", "must be at least 1"));
        }
        if !(self.feature_frac > 0.0 && self.feature_frac <= 1.0) {
            return Err(Error::param("feature_frac", "must lie in (0, 1]"));
        }
        super::validate_tree(&self.tree())
    }

    fn tree(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
        }
    }

    /// Features considered per split for `p` columns.
    pub fn features_per_split(&self, p: usize) -> usize {
        ((self.feature_frac * p as f64).ceil() as usize).clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub rows: usize,
    /// First and last training timestamp, when known.
    pub time_range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub training_meta: TrainingMeta,
}

impl ForestModel {
    pub fn predict_row(&self, row: &impl Fn(usize) -> f64) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.feature_names.len() {
            return Err(Error::ArityMismatch {
                expected: self.feature_names.len(),
                got: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }
}

/// Random forest: bootstrap rows per tree and a random feature subset per
/// split. Tree `i` draws from the stream `mix(seed, i)`, so the result does
/// not depend on how trees are scheduled across threads.
pub fn fit_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel> {
    params.validate()?;
    let (n, p) = x.shape();
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
    let presorted = Presorted::new(x)?;
    let per_split = params.features_per_split(p);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded(mix(seed, t as u64));
            let mut weights = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    weights[rng.random_range(0..n)] += 1;
                }
            } else {
                weights.fill(1);
            }
            let sampler = FeatureSampler {
                rng: &mut rng,
                per_split,
            };
            grow(x, y, &presorted, &weights, params.tree(), Some(sampler))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        feature_names: (0..p).map(|j| format!("x{j}")).collect(),
        seed,
        training_meta: TrainingMeta {
            rows: n,
            time_range: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::fit_tree;
    use super::*;

    fn data() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(60, 3, |r, c| ((r * (c + 3) * 7919) % 101) as f64 / 10.0);
        let y = (0..60).map(|r| x[(r, 0)] * 2.0 + (x[(r, 1)] > 5.0) as u8 as f64).collect();
        (x, y)
    }

    #[test]
    fn degenerate_forest_equals_tree() {
        let (x, y) = data();
        let params = ForestParams {
            n_trees: 1,
            feature_frac: 1.0,
            bootstrap: false,
            max_depth: 6,
            min_leaf: 3,
        };
        let f = fit_forest(&x, &y, &params, 9).unwrap();
        let t = fit_tree(&x, &y, TreeParams { max_depth: 6, min_leaf: 3 }).unwrap();
        assert_eq!(f.trees[0], t);
    }

    #[test]
    fn constant_target_everywhere() {
        let (x, _) = data();
        let f = fit_forest(&x, &[3.5; 60], &ForestParams::default(), 1).unwrap();
        assert!(f.trees.iter().all(|t| *t == TreeNode::Leaf { value: 3.5 }));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (x, y) = data();
        let params = ForestParams { n_trees: 8, ..Default::default() };
        let a = fit_forest(&x, &y, &params, 42).unwrap();
        let b = fit_forest(&x, &y, &params, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = fit_forest(&x, &y, &params, 43).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn predictions_within_training_range() {
        let (x, y) = data();
        let f = fit_forest(&x, &y, &ForestParams { n_trees: 10, ..Default::default() }, 5).unwrap();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        for r in 0..60 {
            let p = f.predict_row(&|c| x[(r, c)] * 3.0 - 7.0);
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn zero_trees_rejected() {
        let (x, y) = data();
        let params = ForestParams { n_trees: 0, ..Default::default() };
        assert!(matches!(fit_forest(&x, &y, &params, 0), Err(Error::InvalidParam { .. })));
    }
}
