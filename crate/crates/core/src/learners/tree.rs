//! Exact CART regression trees.
//!
//! Trees grow level by level over per-feature presorted row orders. Rows carry
//! integer weights, so a bootstrap sample is the same rows with multiplicity
//! and splits never need re-sorting. Split candidates sit at midpoints between
//! consecutive distinct values; a sample goes right iff `x > threshold`.
//! Equal gains (up to rounding) resolve to the lower feature index, then the
//! lower threshold.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const GAIN_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, row: &impl Fn(usize) -> f64) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row(*feature) > *threshold { right } else { left },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.n_nodes() + right.n_nodes(),
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    /// Visits leaf values in preorder.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(f64)) {
        match self {
            TreeNode::Leaf { value } => f(*value),
            TreeNode::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum number of samples in each child of a split.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 5,
        }
    }
}

/// Row orders per feature, sorted by value with ties broken by row index.
pub struct Presorted {
    orders: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries("non-finite value in design matrix".into()));
        }
        let n = x.nrows();
        let orders = (0..x.ncols())
            .map(|j| {
                let col = x.column(j);
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                order
            })
            .collect();
        Ok(Self { orders })
    }
}

/// Per-split random feature subsets.
pub struct FeatureSampler<'a> {
    pub rng: &'a mut Rng,
    pub per_split: usize,
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Pending {
    depth: usize,
    count: u64,
    sum: f64,
    y_min: f64,
    y_max: f64,
}

enum Built {
    Leaf(f64),
    Split(usize, f64, usize, usize),
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // `lo` itself still separates the two values under the `>` rule.
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Grows one tree on rows with nonzero `weights`.
pub fn grow(
    x: &DMatrix<f64>,
    y: &[f64],
    presorted: &Presorted,
    weights: &[u32],
    params: TreeParams,
    mut sampler: Option<FeatureSampler<'_>>,
) -> Result<TreeNode> {
    let (n, p) = x.shape();
    if y.len() != n || weights.len() != n {
        return Err(Error::LengthMismatch(y.len(), n));
    }
    let cols: Vec<&[f64]> = (0..p)
        .map(|j| &x.as_slice()[j * n..(j + 1) * n])
        .collect();

    let mut node_of: Vec<u32> = weights.iter().map(|&w| if w > 0 { 0 } else { NONE }).collect();
    let mut root = Pending {
        depth: 0,
        count: 0,
        sum: 0.0,
        y_min: f64::INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for r in 0..n {
        if weights[r] > 0 {
            root.count += weights[r] as u64;
            root.sum += weights[r] as f64 * y[r];
            root.y_min = root.y_min.min(y[r]);
            root.y_max = root.y_max.max(y[r]);
        }
    }
    if root.count == 0 {
        return Err(Error::NoRecords);
    }

    let mut built: Vec<Option<Built>> = vec![None];
    let mut pending: Vec<Pending> = vec![root];
    let mut pending_ids: Vec<usize> = vec![0];
    let min_leaf = params.min_leaf.max(1) as u64;

    while !pending.is_empty() {
        // Slot per pending node; NONE marks nodes that will become leaves.
        let mut slot_of_node = vec![NONE; built.len()];
        let mut splittable: Vec<usize> = Vec::new();
        let mut feature_mask: Vec<Vec<bool>> = Vec::new();
        for (i, node) in pending.iter().enumerate() {
            let can_split = node.depth < params.max_depth
                && node.count >= 2 * min_leaf
                && node.y_min < node.y_max;
            if !can_split {
                continue;
            }
            slot_of_node[pending_ids[i]] = splittable.len() as u32;
            splittable.push(i);
            let mut mask = vec![false; p];
            match sampler.as_mut() {
                Some(s) if s.per_split < p => {
                    for f in sample(s.rng, p, s.per_split) {
                        mask[f] = true;
                    }
                }
                _ => mask.fill(true),
            }
            feature_mask.push(mask);
        }

        let slots = splittable.len();
        let mut best: Vec<Option<Best>> = vec![None; slots];
        let mut left_count = vec![0u64; slots];
        let mut left_sum = vec![0.0f64; slots];
        let mut last_value = vec![f64::NAN; slots];
        for f in 0..p {
            if !feature_mask.iter().any(|m| m[f]) {
                continue;
            }
            left_count.fill(0);
            left_sum.fill(0.0);
            let col = cols[f];
            for &r in &presorted.orders[f] {
                let r = r as usize;
                let node = node_of[r];
                if node == NONE {
                    continue;
                }
                let slot = slot_of_node[node as usize];
                if slot == NONE || !feature_mask[slot as usize][f] {
                    continue;
                }
                let s = slot as usize;
                let v = col[r];
                if left_count[s] > 0 && v > last_value[s] {
                    let pend = &pending[splittable[s]];
                    let nl = left_count[s];
                    let nr = pend.count - nl;
                    if nl >= min_leaf && nr >= min_leaf {
                        let sl = left_sum[s];
                        let sr = pend.sum - sl;
                        let children = sl * sl / nl as f64 + sr * sr / nr as f64;
                        let gain = children - pend.sum * pend.sum / pend.count as f64;
                        // Gains within rounding of each other are ties, so the
                        // scan order (feature, then threshold) decides.
                        let eps = GAIN_RTOL * children.abs();
                        if gain > eps && best[s].is_none_or(|b| gain > b.gain + eps) {
                            best[s] = Some(Best {
                                gain,
                                feature: f,
                                threshold: midpoint(last_value[s], v),
                            });
                        }
                    }
                }
                let w = weights[r];
                left_count[s] += w as u64;
                left_sum[s] += w as f64 * y[r];
                last_value[s] = v;
            }
        }

        // Finalize this level and route rows into the next one.
        let mut child_of_slot: Vec<Option<(usize, usize)>> = vec![None; slots];
        let mut next_pending = Vec::new();
        let mut next_ids = Vec::new();
        for (i, node) in pending.iter().enumerate() {
            let id = pending_ids[i];
            let slot = slot_of_node[id];
            let split = (slot != NONE).then(|| best[slot as usize]).flatten();
            match split {
                Some(b) => {
                    let (l, r) = (built.len(), built.len() + 1);
                    built.push(None);
                    built.push(None);
                    built[id] = Some(Built::Split(b.feature, b.threshold, l, r));
                    child_of_slot[slot as usize] = Some((l, r));
                    for child in [l, r] {
                        next_ids.push(child);
                        next_pending.push(Pending {
                            depth: node.depth + 1,
                            count: 0,
                            sum: 0.0,
                            y_min: f64::INFINITY,
                            y_max: f64::NEG_INFINITY,
                        });
                    }
                }
                None => built[id] = Some(Built::Leaf(node.sum / node.count as f64)),
            }
        }
        let base = next_ids.first().copied().unwrap_or(0);
        for r in 0..n {
            let node = node_of[r];
            if node == NONE {
                continue;
            }
            let slot = slot_of_node[node as usize];
            let children = (slot != NONE).then(|| child_of_slot[slot as usize]).flatten();
            let Some((l, rt)) = children else {
                node_of[r] = NONE;
                continue;
            };
            let Some(Built::Split(f, thr, ..)) = built[node as usize] else {
                unreachable!()
            };
            let child = if cols[f][r] > thr { rt } else { l };
            node_of[r] = child as u32;
            let pend = &mut next_pending[child - base];
            let w = weights[r];
            pend.count += w as u64;
            pend.sum += w as f64 * y[r];
            pend.y_min = pend.y_min.min(y[r]);
            pend.y_max = pend.y_max.max(y[r]);
        }
        pending = next_pending;
        pending_ids = next_ids;
    }

    fn assemble(built: &[Option<Built>], id: usize) -> TreeNode {
        match built[id].as_ref().expect("every node finalized") {
            Built::Leaf(value) => TreeNode::Leaf { value: *value },
            Built::Split(feature, threshold, l, r) => TreeNode::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(assemble(built, *l)),
                right: Box::new(assemble(built, *r)),
            },
        }
    }
    Ok(assemble(&built, 0))
}

/// Single CART regression tree on all rows and all features.
pub fn fit_tree(x: &DMatrix<f64>, y: &[f64], params: TreeParams) -> Result<TreeNode> {
    if x.nrows() == 0 {
        return Err(Error::NoRecords);
    }
    if x.nrows() < params.min_leaf {
        return Err(Error::param(
            "min_leaf",
            format!("{} rows is fewer than min_leaf {}", x.nrows(), params.min_leaf),
        ));
    }
    let presorted = Presorted::new(x)?;
    grow(x, y, &presorted, &vec![1; x.nrows()], params, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn predict(t: &TreeNode, x: &DMatrix<f64>, r: usize) -> f64 {
        t.predict(&|f| x[(r, f)])
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = DMatrix::from_column_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = fit_tree(&x, &[4.0; 6], TreeParams { max_depth: 5, min_leaf: 1 }).unwrap();
        assert_eq!(t, TreeNode::Leaf { value: 4.0 });
    }

    #[test]
    fn step_function_splits_at_zero() {
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, 1.0, -1.0, 1.0]);
        let t = fit_tree(&x, &[0.0, 1.0, 0.0, 1.0], TreeParams { max_depth: 1, min_leaf: 1 })
            .unwrap();
        assert_eq!(
            t,
            TreeNode::Split {
                feature: 0,
                threshold: 0.0,
                left: Box::new(TreeNode::Leaf { value: 0.0 }),
                right: Box::new(TreeNode::Leaf { value: 1.0 }),
            }
        );
    }

    #[test]
    fn ties_prefer_lower_feature() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let t = fit_tree(&x, &[0.0, 0.0, 1.0, 1.0], TreeParams { max_depth: 1, min_leaf: 1 })
            .unwrap();
        assert!(matches!(t, TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn min_leaf_and_depth_respected() {
        let x = DMatrix::from_fn(40, 1, |r, _| r as f64);
        let y: Vec<f64> = (0..40).map(|r| ((r * 7) % 11) as f64).collect();
        let t = fit_tree(&x, &y, TreeParams { max_depth: 3, min_leaf: 4 }).unwrap();
        assert!(t.depth() <= 3);
        fn leaf_sizes(t: &TreeNode, rows: Vec<usize>, x: &DMatrix<f64>, out: &mut Vec<usize>) {
            match t {
                TreeNode::Leaf { .. } => out.push(rows.len()),
                TreeNode::Split { feature, threshold, left, right } => {
                    let (r, l): (Vec<usize>, Vec<usize>) =
                        rows.into_iter().partition(|&i| x[(i, *feature)] > *threshold);
                    leaf_sizes(left, l, x, out);
                    leaf_sizes(right, r, x, out);
                }
            }
        }
        let mut sizes = vec![];
        leaf_sizes(&t, (0..40).collect(), &x, &mut sizes);
        assert!(sizes.iter().all(|&s| s >= 4), "{sizes:?}");
    }

    #[test]
    fn weights_equal_duplicated_rows() {
        let x = DMatrix::from_row_slice(5, 2, &[0.1, 3.0, 0.4, 1.0, 0.2, 2.0, 0.9, 0.5, 0.5, 0.7]);
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let w = [2u32, 0, 1, 3, 1];
        let params = TreeParams { max_depth: 4, min_leaf: 2 };
        let weighted = grow(&x, &y, &Presorted::new(&x).unwrap(), &w, params, None).unwrap();

        let rows: Vec<usize> = w.iter().enumerate().flat_map(|(r, &k)| vec![r; k as usize]).collect();
        let xd = DMatrix::from_fn(rows.len(), 2, |i, j| x[(rows[i], j)]);
        let yd: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let expanded = fit_tree(&xd, &yd, params).unwrap();
        assert_eq!(weighted, expanded);
        for r in 0..5 {
            assert_eq!(predict(&weighted, &x, r), predict(&expanded, &x, r));
        }
    }

    #[test]
    fn empty_input_errors() {
        let x = DMatrix::<f64>::zeros(0, 2);
        assert!(fit_tree(&x, &[], TreeParams::default()).is_err());
    }

    #[test]
    fn midpoint_never_reaches_upper_value() {
        let lo = 1.0f64;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let m = midpoint(lo, hi);
        assert!(m >= lo && m < hi);
        assert_eq!(midpoint(-1.0, 1.0), 0.0);
    }
}
