//! Integer-only forest representation ("mapping table").
//!
//! Thresholds, leaves and inputs are binary fixed-point numbers with
//! `scale_bits` fractional bits. Evaluation uses only integer comparisons and
//! a wide-integer mean, so every platform computes identical outputs. The
//! byte layout is documented in `docs/format.md`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{ForestModel, TreeNode};
use crate::timeseries::fmt_f64;

pub const MAGIC: [u8; 4] = *b"CPFX";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_SCALE_BITS: u32 = 32;
const NODE_BYTES: usize = 27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedNode {
    /// Split feature, or -1 for a leaf.
    pub feature: i16,
    pub threshold: i64,
    /// Child node indices, or -1 for a leaf.
    pub left: i32,
    pub right: i32,
    pub leaf_value: i64,
    pub is_leaf: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointForest {
    pub format_version: u8,
    pub scale_bits: u32,
    pub feature_names: Vec<String>,
    /// Nodes of each tree in preorder; children always follow their parent.
    pub trees: Vec<Vec<FixedNode>>,
}

/// Rounds `v · 2^scale_bits` half-to-even into an `i64`.
pub fn to_fixed(v: f64, scale_bits: u32) -> Option<i64> {
    let scaled = (v * 2f64.powi(scale_bits as i32)).round_ties_even();
    // 2^63 itself is out of range; every smaller float in range converts exactly.
    (scaled.is_finite() && scaled >= -(2f64.powi(63)) && scaled < 2f64.powi(63))
        .then_some(scaled as i64)
}

pub fn from_fixed(v: i64, scale_bits: u32) -> f64 {
    v as f64 / 2f64.powi(scale_bits as i32)
}

/// Scales a float input row for [`eval_fixed`].
pub fn quantize_input(x: &[f64], scale_bits: u32) -> Result<Vec<i64>> {
    x.iter()
        .map(|&v| {
            to_fixed(v, scale_bits).ok_or_else(|| {
                Error::param("input", format!("{v} overflows at {scale_bits} fractional bits"))
            })
        })
        .collect()
}

pub fn quantize_forest(model: &ForestModel, scale_bits: u32) -> Result<FixedPointForest> {
    if scale_bits > 62 {
        return Err(Error::param("scale_bits", "must be at most 62"));
    }
    if model.feature_names.len() > i16::MAX as usize + 1 {
        return Err(Error::param("feature_names", "more features than an i16 index can address"));
    }
    let mut trees = Vec::with_capacity(model.trees.len());
    for (t, root) in model.trees.iter().enumerate() {
        let mut nodes = Vec::new();
        flatten(root, t, scale_bits, &mut nodes)?;
        trees.push(nodes);
    }
    Ok(FixedPointForest {
        format_version: FORMAT_VERSION,
        scale_bits,
        feature_names: model.feature_names.clone(),
        trees,
    })
}

fn flatten(node: &TreeNode, tree: usize, scale_bits: u32, out: &mut Vec<FixedNode>) -> Result<usize> {
    let id = out.len();
    let fixed = |value: f64| {
        to_fixed(value, scale_bits).ok_or(Error::Overflow {
            tree,
            node: id,
            value,
            scale_bits,
        })
    };
    match node {
        TreeNode::Leaf { value } => out.push(FixedNode {
            feature: -1,
            threshold: 0,
            left: -1,
            right: -1,
            leaf_value: fixed(*value)?,
            is_leaf: true,
        }),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            out.push(FixedNode {
                feature: *feature as i16,
                threshold: fixed(*threshold)?,
                left: -1,
                right: -1,
                leaf_value: 0,
                is_leaf: false,
            });
            let l = flatten(left, tree, scale_bits, out)?;
            let r = flatten(right, tree, scale_bits, out)?;
            out[id].left = l as i32;
            out[id].right = r as i32;
        }
    }
    Ok(id)
}

/// `num / den` rounded half to even; `den > 0`.
fn div_round_half_even(num: i128, den: i128) -> i128 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

impl FixedPointForest {
    fn eval_tree(&self, nodes: &[FixedNode], x: &[i64]) -> i64 {
        let mut i = 0usize;
        loop {
            let n = &nodes[i];
            if n.is_leaf {
                return n.leaf_value;
            }
            i = if x[n.feature as usize] > n.threshold {
                n.right
            } else {
                n.left
            } as usize;
        }
    }
}

/// Integer-only prediction for an input already scaled by `scale_bits`.
pub fn eval_fixed(f: &FixedPointForest, x: &[i64]) -> Result<i64> {
    if x.len() != f.feature_names.len() {
        return Err(Error::ArityMismatch {
            expected: f.feature_names.len(),
            got: x.len(),
        });
    }
    let sum: i128 = f.trees.iter().map(|t| f.eval_tree(t, x) as i128).sum();
    // A mean of i64 values always fits back into i64.
    Ok(div_round_half_even(sum, f.trees.len() as i128) as i64)
}

pub fn serialize(f: &FixedPointForest) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(f.format_version);
    out.push(f.scale_bits as u8);
    out.extend_from_slice(&(f.feature_names.len() as u32).to_le_bytes());
    for name in &f.feature_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(f.trees.len() as u32).to_le_bytes());
    for tree in &f.trees {
        out.extend_from_slice(&(tree.len() as u32).to_le_bytes());
        for n in tree {
            out.extend_from_slice(&n.feature.to_le_bytes());
            out.extend_from_slice(&n.threshold.to_le_bytes());
            out.extend_from_slice(&n.left.to_le_bytes());
            out.extend_from_slice(&n.right.to_le_bytes());
            out.extend_from_slice(&n.leaf_value.to_le_bytes());
            out.push(n.is_leaf as u8);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let (head, rest) = self.bytes.split_first_chunk::<N>().ok_or(Error::Truncated)?;
        self.bytes = rest;
        Ok(*head)
    }

    fn take_slice(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }
}

/// Parses and validates a serialized forest. Nothing is returned unless the
/// whole buffer is a well-formed model.
pub fn deserialize(bytes: &[u8]) -> Result<FixedPointForest> {
    let mut r = Reader { bytes };
    if r.take::<4>()? != MAGIC {
        return Err(Error::BadMagic);
    }
    let [version] = r.take::<1>()?;
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let [scale_bits] = r.take::<1>()?;
    let n_features = r.u32()? as usize;
    let mut feature_names = Vec::new();
    for _ in 0..n_features {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take_slice(len)?)
            .map_err(|e| Error::param("feature_names", e.to_string()))?;
        feature_names.push(name.to_string());
    }
    let n_trees = r.u32()? as usize;
    if n_trees == 0 {
        return Err(Error::BadNodeTable {
            tree: 0,
            node: 0,
            reason: "model has no trees".into(),
        });
    }
    let mut trees = Vec::new();
    for t in 0..n_trees {
        let n_nodes = r.u32()? as usize;
        if r.bytes.len() < n_nodes.saturating_mul(NODE_BYTES) {
            return Err(Error::Truncated);
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let feature = i16::from_le_bytes(r.take()?);
            let threshold = i64::from_le_bytes(r.take()?);
            let left = i32::from_le_bytes(r.take()?);
            let right = i32::from_le_bytes(r.take()?);
            let leaf_value = i64::from_le_bytes(r.take()?);
            let [flag] = r.take::<1>()?;
            nodes.push(FixedNode {
                feature,
                threshold,
                left,
                right,
                leaf_value,
                is_leaf: flag == 1,
            });
            if flag > 1 {
                return Err(Error::BadNodeTable {
                    tree: t,
                    node: nodes.len() - 1,
                    reason: format!("leaf flag {flag}"),
                });
            }
        }
        validate_tree(t, &nodes, n_features)?;
        trees.push(nodes);
    }
    if !r.bytes.is_empty() {
        return Err(Error::TrailingBytes(r.bytes.len()));
    }
    Ok(FixedPointForest {
        format_version: version,
        scale_bits: scale_bits as u32,
        feature_names,
        trees,
    })
}

/// Children must point strictly forward and stay in bounds, which rules out
/// cycles; leaves carry the -1 sentinels.
fn validate_tree(tree: usize, nodes: &[FixedNode], n_features: usize) -> Result<()> {
    let bad = |node: usize, reason: String| Error::BadNodeTable { tree, node, reason };
    if nodes.is_empty() {
        return Err(bad(0, "empty tree".into()));
    }
    let mut parents = vec![0u32; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if n.is_leaf {
            if n.feature != -1 || n.left != -1 || n.right != -1 {
                return Err(bad(i, "leaf with split fields".into()));
            }
            continue;
        }
        if n.feature < 0 || n.feature as usize >= n_features {
            return Err(bad(i, format!("feature {} out of range", n.feature)));
        }
        for child in [n.left, n.right] {
            if child <= i as i32 || child as usize >= nodes.len() {
                return Err(bad(i, format!("child {child} out of bounds")));
            }
            parents[child as usize] += 1;
        }
    }
    if let Some(i) = (1..nodes.len()).find(|&i| parents[i] != 1) {
        return Err(bad(i, format!("node reached from {} parents", parents[i])));
    }
    Ok(())
}

/// Human-auditable node table: `tree,node,feature,threshold,left,right,leaf_value,is_leaf`
/// with integers in scaled units.
pub fn node_table_csv(f: &FixedPointForest) -> String {
    let mut out = String::from("tree,node,feature,threshold,left,right,leaf_value,is_leaf\n");
    for (t, tree) in f.trees.iter().enumerate() {
        for (i, n) in tree.iter().enumerate() {
            let _ = writeln!(
                out,
                "{t},{i},{},{},{},{},{},{}",
                n.feature, n.threshold, n.left, n.right, n.leaf_value, n.is_leaf as u8
            );
        }
    }
    out
}

/// A prediction that strays too far from an independent reference price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub index: usize,
    pub predicted: f64,
    pub reference: f64,
    pub relative: f64,
}

/// Flags predictions whose relative deviation from `reference` exceeds
/// `tolerance`. A reference at or below zero is always flagged unless the
/// prediction matches it exactly.
pub fn sense_check(predicted: &[f64], reference: &[f64], tolerance: f64) -> Result<Vec<Deviation>> {
    if predicted.len() != reference.len() {
        return Err(Error::LengthMismatch(predicted.len(), reference.len()));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::param("tolerance", "must be non-negative"));
    }
    Ok(predicted
        .iter()
        .zip(reference)
        .enumerate()
        .filter_map(|(index, (&p, &r))| {
            let relative = if r > 0.0 {
                (p - r).abs() / r
            } else if p == r {
                0.0
            } else {
                f64::INFINITY
            };
            (!(relative <= tolerance)).then_some(Deviation {
                index,
                predicted: p,
                reference: r,
                relative,
            })
        })
        .collect())
}

/// Float rendering of a fixed-point value for reports.
pub fn fmt_fixed(v: i64, scale_bits: u32) -> String {
    fmt_f64(from_fixed(v, scale_bits))
}
