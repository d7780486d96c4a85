//! Exact Shapley attributions for tree ensembles.
//!
//! Attributions use the path-dependent conditional expectation: a feature
//! outside the conditioning set averages both children of any split on it,
//! weighted by the children's training cover.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boosted_trees::{BoostError, Tree, TreeEnsemble, TreeNode};
use crate::preprocess::FeatureFrame;

/// Label recorded in exported metadata.
pub const SHAP_METHOD: &str = "tree_path_dependent";

/// Largest feature count the subset-enumeration oracle accepts.
pub const BRUTE_FORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("tree uses {0} distinct features, brute force allows at most {BRUTE_FORCE_MAX_FEATURES}")]
    TooManyFeatures(usize),
    #[error("cannot summarise an empty frame")]
    EmptyFrame,
    #[error(transparent)]
    Boost(#[from] BoostError),
}

/// Per-feature contributions for one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    pub values: Vec<f64>,
}

impl Attribution {
    pub fn zeros(n_features: usize, base_value: f64) -> Self {
        Self {
            base_value,
            values: vec![0.0; n_features],
        }
    }

    /// `base_value + sum(values)`, which equals the model output.
    pub fn total(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }
}

/// Expected tree output when only features in `subset` are observed.
pub fn tree_set_expectation(tree: &Tree, row: &[f64], subset: &[bool]) -> f64 {
    fn go(tree: &Tree, i: usize, row: &[f64], subset: &[bool]) -> f64 {
        match &tree.nodes[i] {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                cover,
                ..
            } => {
                if subset[*feature] {
                    let next = if row[*feature] < *threshold { *left } else { *right };
                    go(tree, next, row, subset)
                } else {
                    let lc = tree.nodes[*left].cover();
                    let rc = tree.nodes[*right].cover();
                    (lc * go(tree, *left, row, subset) + rc * go(tree, *right, row, subset)) / cover
                }
            }
        }
    }
    go(tree, 0, row, subset)
}

/// Cover-weighted mean leaf value; the attribution base for one tree.
pub fn tree_expected_value(tree: &Tree) -> f64 {
    let none = vec![false; max_feature(tree) + 1];
    tree_set_expectation(tree, &[], &none)
}

fn max_feature(tree: &Tree) -> usize {
    tree.features().last().copied().unwrap_or(0)
}

/// Shapley values by enumerating every coalition of the tree's split features.
pub fn brute_force_shapley(tree: &Tree, row: &[f64]) -> Result<Attribution, ShapError> {
    let used = tree.features();
    let m = used.len();
    if m > BRUTE_FORCE_MAX_FEATURES {
        return Err(ShapError::TooManyFeatures(m));
    }
    let width = row.len().max(max_feature(tree) + 1);
    let mut subset = vec![false; width];
    let values: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            for (b, &f) in used.iter().enumerate() {
                subset[f] = mask >> b & 1 == 1;
            }
            tree_set_expectation(tree, row, &subset)
        })
        .collect();

    let mut fact = vec![1.0f64; m + 1];
    for k in 1..=m {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut out = Attribution::zeros(row.len(), values[0]);
    for (b, &f) in used.iter().enumerate() {
        let bit = 1usize << b;
        let mut phi = 0.0;
        for mask in 0..1usize << m {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = fact[s] * fact[m - s - 1] / fact[m];
            phi += weight * (values[mask | bit] - values[mask]);
        }
        out.values[f] = phi;
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

const EMPTY: PathElement = PathElement {
    feature: None,
    zero_fraction: 0.0,
    one_fraction: 0.0,
    weight: 0.0,
};

fn extend_path(path: &mut [PathElement], depth: usize, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    path[depth] = PathElement {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d = depth as f64;
    for i in (0..depth).rev() {
        let fi = i as f64;
        path[i + 1].weight += one_fraction * path[i].weight * (fi + 1.0) / (d + 1.0);
        path[i].weight = zero_fraction * path[i].weight * (d - fi) / (d + 1.0);
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        let fi = i as f64;
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * (d + 1.0) / ((fi + 1.0) * one);
            next_one = tmp - path[i].weight * zero * (d - fi) / (d + 1.0);
        } else {
            path[i].weight = path[i].weight * (d + 1.0) / (zero * (d - fi));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        let fi = i as f64;
        if one != 0.0 {
            let tmp = next_one * (d + 1.0) / ((fi + 1.0) * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (d - fi) / (d + 1.0);
        } else {
            total += path[i].weight / zero / ((d - fi) / (d + 1.0));
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    row: &[f64],
    phi: &mut [f64],
    node: usize,
    parent_path: &[PathElement],
    mut depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    let mut path = parent_path[..depth].to_vec();
    path.resize(depth + 1, EMPTY);
    extend_path(&mut path, depth, zero_fraction, one_fraction, feature);

    match &tree.nodes[node] {
        TreeNode::Leaf { weight, .. } => {
            for i in 1..=depth {
                let w = unwound_path_sum(&path, depth, i);
                let el = path[i];
                if let Some(f) = el.feature {
                    phi[f] += w * (el.one_fraction - el.zero_fraction) * weight;
                }
            }
        }
        TreeNode::Split {
            feature: split,
            threshold,
            left,
            right,
            cover,
            ..
        } => {
            let (hot, cold) = if row[*split] < *threshold {
                (*left, *right)
            } else {
                (*right, *left)
            };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            // A feature already on the path is undone and re-added with combined fractions.
            if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(*split)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, depth, k);
                depth -= 1;
            }
            recurse(tree, row, phi, hot, &path, depth + 1, hot_zero * incoming_zero, incoming_one, Some(*split));
            recurse(tree, row, phi, cold, &path, depth + 1, cold_zero * incoming_zero, 0.0, Some(*split));
        }
    }
}

/// Polynomial-time exact attribution for a single tree (no ensemble base score).
pub fn tree_shap(tree: &Tree, row: &[f64]) -> Attribution {
    let mut out = Attribution::zeros(row.len(), tree_expected_value(tree));
    recurse(tree, row, &mut out.values, 0, &[], 0, 1.0, 1.0, None);
    out
}

/// Attribution for one row laid out in the ensemble's column order.
pub fn shap_values(ensemble: &TreeEnsemble, row: &[f64]) -> Result<Attribution, ShapError> {
    if row.len() != ensemble.columns.len() {
        return Err(BoostError::RowWidth {
            expected: ensemble.columns.len(),
            found: row.len(),
        }
        .into());
    }
    let mut out = Attribution::zeros(row.len(), ensemble.base_score);
    for tree in &ensemble.trees {
        let a = tree_shap(tree, row);
        out.base_value += a.base_value;
        for (acc, v) in out.values.iter_mut().zip(&a.values) {
            *acc += v;
        }
    }
    Ok(out)
}

/// Attributions for every frame row, binding model columns by name.
pub fn shap_frame(ensemble: &TreeEnsemble, frame: &FeatureFrame) -> Result<Vec<Attribution>, ShapError> {
    let bound = ensemble.bind(frame.columns())?;
    frame
        .rows()
        .map(|src| {
            let row: Vec<f64> = bound.iter().map(|&j| src[j]).collect();
            shap_values(ensemble, &row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShap {
    pub feature: String,
    pub column: usize,
    pub mean_abs: f64,
    /// (feature value, attribution) for each row, in frame row order.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub method: String,
    /// Ranked by mean |attribution| descending, ties by column index.
    pub features: Vec<FeatureShap>,
    pub attributions: Vec<Attribution>,
}

/// Mean-|φ| ranking over a frame. Excluded columns still contribute to every
/// attribution but are left out of the ranking.
pub fn shap_summary<S: AsRef<str>>(
    ensemble: &TreeEnsemble,
    frame: &FeatureFrame,
    exclude: &[S],
) -> Result<ShapSummary, ShapError> {
    if frame.is_empty() {
        return Err(ShapError::EmptyFrame);
    }
    let attributions = shap_frame(ensemble, frame)?;
    let bound = ensemble.bind(frame.columns())?;
    let n = attributions.len() as f64;
    let mut features: Vec<FeatureShap> = ensemble
        .columns
        .iter()
        .enumerate()
        .filter(|(_, name)| !exclude.iter().any(|e| e.as_ref() == name.as_str()))
        .map(|(column, name)| {
            let points: Vec<(f64, f64)> = attributions
                .iter()
                .enumerate()
                .map(|(r, a)| (frame.value(r, bound[column]), a.values[column]))
                .collect();
            FeatureShap {
                feature: name.clone(),
                column,
                mean_abs: points.iter().map(|(_, p)| p.abs()).sum::<f64>() / n,
                points,
            }
        })
        .collect();
    features.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.column.cmp(&b.column)));
    Ok(ShapSummary {
        method: SHAP_METHOD.to_string(),
        features,
        attributions,
    })
}
