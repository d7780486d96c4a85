//! Second-order gradient-boosted regression trees with exact greedy splits.
//!
//! Squared-error loss only: every row has gradient `prediction - target` and
//! hessian 1, so a node's cover is its row count. The learning rate is folded
//! into stored leaf weights, making prediction a plain sum.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FeatureFrame;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("cannot train on an empty frame")]
    EmptyFrame,
    #[error("feature `{0}` is missing from the input")]
    MissingFeature(String),
    #[error("row has {found} values, model expects {expected}")]
    RowWidth { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum BaseScore {
    /// Mean of the training targets.
    Mean,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    pub base_score: BaseScore,
    /// Row sampling fraction per round; 1.0 disables sampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            learning_rate: 0.3,
            max_depth: 6,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: BaseScore::Mean,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), BoostError> {
        let bad = |m: &str| Err(BoostError::InvalidParams(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.min_child_weight >= 0.0) {
            return bad("lambda, gamma and min_child_weight must be >= 0");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if let BaseScore::Fixed(v) = self.base_score {
            if !v.is_finite() {
                return bad("base_score must be finite");
            }
        }
        Ok(())
    }
}

/// Regularized objective reduction of splitting a node into (L, R).
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// Newton step for a leaf.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Routing for missing values; frames never contain any.
        default_left: bool,
        gain: f64,
        grad: f64,
        cover: f64,
    },
    Leaf {
        weight: f64,
        grad: f64,
        cover: f64,
    },
}

impl TreeNode {
    pub fn cover(&self) -> f64 {
        match self {
            Self::Split { cover, .. } | Self::Leaf { cover, .. } => *cover,
        }
    }

    pub fn grad(&self) -> f64 {
        match self {
            Self::Split { grad, .. } | Self::Leaf { grad, .. } => *grad,
        }
    }
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(weight: f64, cover: f64) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf {
                weight,
                grad: 0.0,
                cover,
            }],
        }
    }

    /// Index of the leaf `row` lands in.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    default_left,
                    ..
                } => {
                    let x = row[*feature];
                    i = if x.is_nan() {
                        if *default_left {
                            *left
                        } else {
                            *right
                        }
                    } else if x < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { weight, .. } => *weight,
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Distinct split features, ascending.
    pub fn features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format_version: u32,
    pub base_score: f64,
    pub columns: Vec<String>,
    pub params: BoostParams,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGain {
    pub feature: String,
    pub column: usize,
    pub gain: f64,
}

impl TreeEnsemble {
    pub fn new(base_score: f64, columns: Vec<String>, params: BoostParams, trees: Vec<Tree>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            base_score,
            columns,
            params,
            trees,
        }
    }

    /// Prediction for a row laid out in `self.columns` order.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64, BoostError> {
        if row.len() != self.columns.len() {
            return Err(BoostError::RowWidth {
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        Ok(self.predict_unchecked(row))
    }

    fn predict_unchecked(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_score, |acc, t| acc + t.predict(row))
    }

    /// Prediction for a row given with its own column names.
    pub fn predict_named<S: AsRef<str>>(&self, names: &[S], values: &[f64]) -> Result<f64, BoostError> {
        let lookup: BTreeMap<&str, f64> = names
            .iter()
            .map(|n| n.as_ref())
            .zip(values.iter().copied())
            .collect();
        let row = self
            .columns
            .iter()
            .map(|c| {
                lookup
                    .get(c.as_str())
                    .copied()
                    .ok_or_else(|| BoostError::MissingFeature(c.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.predict_unchecked(&row))
    }

    /// Predictions for every frame row, binding columns by name.
    pub fn predict_frame(&self, frame: &FeatureFrame) -> Result<Vec<f64>, BoostError> {
        let bound = self.bind(frame.columns())?;
        let mut row = vec![0.0; bound.len()];
        Ok(frame
            .rows()
            .map(|src| {
                for (dst, &j) in row.iter_mut().zip(&bound) {
                    *dst = src[j];
                }
                self.predict_unchecked(&row)
            })
            .collect())
    }

    /// Position of each model column within `names`.
    pub fn bind<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, BoostError> {
        self.columns
            .iter()
            .map(|c| {
                names
                    .iter()
                    .position(|n| n.as_ref() == c)
                    .ok_or_else(|| BoostError::MissingFeature(c.clone()))
            })
            .collect()
    }

    /// Per-feature total split gain over all columns, descending, ties by column index.
    pub fn gain_importance(&self) -> Vec<FeatureGain> {
        let mut totals = vec![0.0; self.columns.len()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let TreeNode::Split { feature, gain, .. } = node {
                    totals[*feature] += gain;
                }
            }
        }
        let mut ranked: Vec<FeatureGain> = totals
            .into_iter()
            .enumerate()
            .map(|(column, gain)| FeatureGain {
                feature: self.columns[column].clone(),
                column,
                gain,
            })
            .collect();
        ranked.sort_by(|a, b| b.gain.total_cmp(&a.gain).then(a.column.cmp(&b.column)));
        ranked
    }

    /// Names of the `k` highest-gain features (fewer when the model has fewer columns).
    pub fn top_features(&self, k: usize) -> Vec<String> {
        self.gain_importance()
            .into_iter()
            .take(k)
            .map(|g| g.feature)
            .collect()
    }

    pub fn to_json(&self) -> Result<String, BoostError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, BoostError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn predict(ensemble: &TreeEnsemble, row: &[f64]) -> Result<f64, BoostError> {
    ensemble.predict_row(row)
}

pub fn gain_importance(ensemble: &TreeEnsemble) -> Vec<FeatureGain> {
    ensemble.gain_importance()
}

/// Per-node split search state during a level scan.
#[derive(Clone)]
struct Scan {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    gl: f64,
    hl: f64,
}

struct Frontier {
    node: usize,
    grad: f64,
    hess: f64,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // Guard against rounding onto the lower value, which would send it right.
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Fits a boosted ensemble on every row of `frame`.
pub fn train(frame: &FeatureFrame, params: &BoostParams) -> Result<TreeEnsemble, BoostError> {
    params.validate()?;
    let n = frame.n_rows();
    if n == 0 {
        return Err(BoostError::EmptyFrame);
    }
    let p = frame.n_cols();
    let targets = frame.targets();
    let base_score = match params.base_score {
        BaseScore::Mean => targets.iter().sum::<f64>() / n as f64,
        BaseScore::Fixed(v) => v,
    };

    // Column-major copy and per-feature ascending order; constant columns can never split.
    let columns: Vec<Vec<f64>> = (0..p).map(|j| frame.column_values(j)).collect();
    let sorted: Vec<Option<Vec<usize>>> = columns
        .iter()
        .map(|col| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            (col[order[0]] < col[order[n - 1]]).then_some(order)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut preds = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut position = vec![0usize; n];
    let mut trees = Vec::with_capacity(params.rounds);

    for _ in 0..params.rounds {
        for i in 0..n {
            let sampled = params.subsample >= 1.0 || rng.gen::<f64>() < params.subsample;
            grad[i] = if sampled { preds[i] - targets[i] } else { 0.0 };
            hess[i] = if sampled { 1.0 } else { 0.0 };
        }
        let tree = grow_tree(&columns, &sorted, &grad, &hess, &mut position, params);
        for (i, pred) in preds.iter_mut().enumerate() {
            *pred += predict_column_major(&tree, &columns, i);
        }
        trees.push(tree);
    }

    Ok(TreeEnsemble::new(
        base_score,
        frame.columns().to_vec(),
        params.clone(),
        trees,
    ))
}

fn predict_column_major(tree: &Tree, columns: &[Vec<f64>], row: usize) -> f64 {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            TreeNode::Leaf { weight, .. } => return *weight,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                i = if columns[*feature][row] < *threshold {
                    *left
                } else {
                    *right
                };
            }
        }
    }
}

const NOT_IN_FRONTIER: usize = usize::MAX;

fn grow_tree(
    columns: &[Vec<f64>],
    sorted: &[Option<Vec<usize>>],
    grad: &[f64],
    hess: &[f64],
    position: &mut [usize],
    params: &BoostParams,
) -> Tree {
    let n = grad.len();
    let (g_root, h_root) = sum_stats(grad, hess, 0..n);
    // Nodes are provisional leaves until split; `weight` is filled on finalisation.
    let mut nodes = vec![TreeNode::Leaf {
        weight: 0.0,
        grad: g_root,
        cover: h_root,
    }];
    position.iter_mut().for_each(|p| *p = 0);
    let mut frontier = vec![Frontier {
        node: 0,
        grad: g_root,
        hess: h_root,
    }];
    let mut slot_of: Vec<usize> = vec![0];

    for _depth in 0..params.max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        let mut scans = vec![
            Scan {
                gl: 0.0,
                hl: 0.0,
                last: 0.0,
                seen: false,
            };
            frontier.len()
        ];
        for (feature, order) in sorted.iter().enumerate() {
            let Some(order) = order else { continue };
            let col = &columns[feature];
            scans.iter_mut().for_each(|s| {
                s.gl = 0.0;
                s.hl = 0.0;
                s.seen = false;
            });
            for &r in order {
                let node = position[r];
                let slot = if node < slot_of.len() {
                    slot_of[node]
                } else {
                    NOT_IN_FRONTIER
                };
                if slot == NOT_IN_FRONTIER || hess[r] == 0.0 {
                    continue;
                }
                let x = col[r];
                let scan = &mut scans[slot];
                if scan.seen && x > scan.last {
                    let f = &frontier[slot];
                    let (gl, hl) = (scan.gl, scan.hl);
                    let (gr, hr) = (f.grad - gl, f.hess - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = split_gain(gl, hl, gr, hr, params.lambda, params.gamma);
                        let better = match &best[slot] {
                            Some(b) => gain > b.gain,
                            None => gain > 0.0,
                        };
                        if better {
                            best[slot] = Some(Candidate {
                                feature,
                                threshold: midpoint(scan.last, x),
                                gain,
                                gl,
                                hl,
                            });
                        }
                    }
                }
                scan.gl += grad[r];
                scan.hl += hess[r];
                scan.last = x;
                scan.seen = true;
            }
        }

        let mut next = Vec::new();
        let mut route: Vec<Option<(usize, f64, usize, usize)>> = vec![None; nodes.len()];
        for (slot, f) in frontier.iter().enumerate() {
            let Some(c) = best[slot] else { continue };
            let left = nodes.len();
            let right = left + 1;
            let (gr, hr) = (f.grad - c.gl, f.hess - c.hl);
            nodes.push(TreeNode::Leaf {
                weight: 0.0,
                grad: c.gl,
                cover: c.hl,
            });
            nodes.push(TreeNode::Leaf {
                weight: 0.0,
                grad: gr,
                cover: hr,
            });
            nodes[f.node] = TreeNode::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right,
                default_left: true,
                gain: c.gain,
                grad: f.grad,
                cover: f.hess,
            };
            route[f.node] = Some((c.feature, c.threshold, left, right));
            next.push(Frontier {
                node: left,
                grad: c.gl,
                hess: c.hl,
            });
            next.push(Frontier {
                node: right,
                grad: gr,
                hess: hr,
            });
        }
        for (r, pos) in position.iter_mut().enumerate() {
            if let Some(Some((feature, threshold, left, right))) = route.get(*pos) {
                *pos = if columns[*feature][r] < *threshold {
                    *left
                } else {
                    *right
                };
            }
        }
        slot_of = vec![NOT_IN_FRONTIER; nodes.len()];
        for (slot, f) in next.iter().enumerate() {
            slot_of[f.node] = slot;
        }
        frontier = next;
    }

    let eta = params.learning_rate;
    for node in &mut nodes {
        if let TreeNode::Leaf { weight, grad, cover } = node {
            *weight = eta * leaf_weight(*grad, *cover, params.lambda);
        }
    }
    Tree { nodes }
}

fn sum_stats(grad: &[f64], hess: &[f64], range: std::ops::Range<usize>) -> (f64, f64) {
    range.fold((0.0, 0.0), |(g, h), i| (g + grad[i], h + hess[i]))
}
