//! Random forest of Gini classification trees.
//!
//! Every feature is indexed once by its sorted distinct training values, so a
//! node can scan split points either with a histogram over those values or,
//! when the node is small, by sorting its own rows. Both paths give exact
//! midpoint thresholds between adjacent values present in the node.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{check_width, ModelError};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    /// Candidate features drawn per node.
    pub mtry: usize,
    /// Minimum training rows per leaf.
    pub nodesize: usize,
    /// Maximum leaves per tree; `None` grows until purity or `nodesize`.
    pub maxnodes: Option<usize>,
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidParameter(m));
        if self.ntree == 0 {
            return bad("ntree must be at least 1".into());
        }
        if self.mtry == 0 || self.mtry > n_features {
            return bad(format!("mtry {} must lie in 1..={n_features}", self.mtry));
        }
        if self.nodesize == 0 {
            return bad("nodesize must be at least 1".into());
        }
        if self.maxnodes == Some(0) {
            return bad("maxnodes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positives: usize,
        total: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root first.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, row: &[f64]) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                leaf => return leaf,
            }
        }
    }

    /// Positive fraction of the leaf reached by `row`.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.leaf_of(row) {
            Node::Leaf { positives, total } => *positives as f64 / *total as f64,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { positives, total } => Some((*positives, *total)),
            Node::Split { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Normalized Gini importance per feature; all zero if no tree split.
    pub importances: Vec<f64>,
}

impl RandomForestModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        rf_predict_proba(self, x)
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// The bootstrap draw of tree `tree`, in draw order.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Per-feature sorted distinct values and each row's position among them.
struct Binned {
    values: Vec<Vec<f64>>,
    bins: Vec<Vec<u32>>,
}

impl Binned {
    fn new(x: &Matrix) -> Binned {
        let (values, bins) = (0..x.cols())
            .into_par_iter()
            .map(|j| {
                let col = x.column(j);
                let mut uniq = col.clone();
                uniq.sort_by(f64::total_cmp);
                uniq.dedup();
                let bins = col
                    .iter()
                    .map(|v| {
                        uniq.binary_search_by(|u| u.total_cmp(v))
                            .expect("value present") as u32
                    })
                    .collect();
                (uniq, bins)
            })
            .unzip();
        Binned { values, bins }
    }
}

fn weighted_gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let (p, n) = (pos as f64, total as f64);
    2.0 * p * (n - p) / n
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    /// Last bin index sent left.
    bin: u32,
    threshold: f64,
    decrease: f64,
}

struct Pending {
    decrease: f64,
    order: usize,
    node: usize,
    rows: Vec<usize>,
    split: Candidate,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // larger decrease first, then earlier creation
    fn cmp(&self, other: &Self) -> Ordering {
        self.decrease
            .total_cmp(&other.decrease)
            .then_with(|| other.order.cmp(&self.order))
    }
}

struct Grower<'a> {
    data: &'a Binned,
    y: &'a [bool],
    params: ForestParams,
    hist_total: Vec<usize>,
    hist_pos: Vec<usize>,
    scratch: Vec<(u32, bool)>,
}

impl Grower<'_> {
    fn best_split(&mut self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let n = rows.len();
        let nodesize = self.params.nodesize;
        if n < 2 * nodesize {
            return None;
        }
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        if pos == 0 || pos == n {
            return None;
        }
        let parent = weighted_gini(pos, n);
        let d = self.data.bins.len();
        let features = index::sample(rng, d, self.params.mtry);
        let mut best: Option<Candidate> = None;
        for feature in features.iter() {
            let bins = &self.data.bins[feature];
            let values = &self.data.values[feature];
            let n_bins = values.len();
            if n_bins < 2 {
                continue;
            }
            let consider = |best: &mut Option<Candidate>,
                            left_bin: u32,
                            next_bin: u32,
                            lt: usize,
                            lp: usize| {
                let rt = n - lt;
                if lt < nodesize || rt < nodesize {
                    return;
                }
                let decrease = parent - weighted_gini(lp, lt) - weighted_gini(pos - lp, rt);
                if best.is_none_or(|b| decrease > b.decrease) {
                    *best = Some(Candidate {
                        feature,
                        bin: left_bin,
                        threshold: (values[left_bin as usize] + values[next_bin as usize]) / 2.0,
                        decrease,
                    });
                }
            };
            if n_bins <= 4 * n {
                self.hist_total[..n_bins].fill(0);
                self.hist_pos[..n_bins].fill(0);
                for &i in rows {
                    let b = bins[i] as usize;
                    self.hist_total[b] += 1;
                    if self.y[i] {
                        self.hist_pos[b] += 1;
                    }
                }
                let (mut lt, mut lp) = (0, 0);
                let mut prev: Option<u32> = None;
                for b in 0..n_bins {
                    if self.hist_total[b] == 0 {
                        continue;
                    }
                    if let Some(p) = prev {
                        consider(&mut best, p, b as u32, lt, lp);
                    }
                    lt += self.hist_total[b];
                    lp += self.hist_pos[b];
                    prev = Some(b as u32);
                }
            } else {
                self.scratch.clear();
                self.scratch
                    .extend(rows.iter().map(|&i| (bins[i], self.y[i])));
                self.scratch.sort_unstable_by_key(|e| e.0);
                let (mut lt, mut lp) = (0, 0);
                let mut k = 0;
                while k < self.scratch.len() {
                    let b = self.scratch[k].0;
                    if lt > 0 {
                        let prev = self.scratch[k - 1].0;
                        consider(&mut best, prev, b, lt, lp);
                    }
                    while k < self.scratch.len() && self.scratch[k].0 == b {
                        lt += 1;
                        lp += usize::from(self.scratch[k].1);
                        k += 1;
                    }
                }
            }
        }
        best
    }
}

fn grow_tree(
    data: &Binned,
    y: &[bool],
    params: ForestParams,
    seed: u64,
    t: usize,
) -> (Tree, Vec<f64>) {
    let n = y.len();
    let mut rng = tree_rng(seed, t);
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let max_bins = data.values.iter().map(Vec::len).max().unwrap_or(0);
    let mut grower = Grower {
        data,
        y,
        params,
        hist_total: vec![0; max_bins],
        hist_pos: vec![0; max_bins],
        scratch: Vec::new(),
    };
    let mut importance = vec![0.0; data.bins.len()];
    let leaf = |rows: &[usize]| Node::Leaf {
        positives: rows.iter().filter(|&&i| y[i]).count(),
        total: rows.len(),
    };
    let mut nodes = vec![leaf(&sample)];
    let mut heap = BinaryHeap::new();
    let mut order = 0;
    if let Some(split) = grower.best_split(&sample, &mut rng) {
        heap.push(Pending {
            decrease: split.decrease,
            order,
            node: 0,
            rows: sample,
            split,
        });
    }
    let mut n_leaves = 1;
    while let Some(p) = heap.pop() {
        if params.maxnodes.is_some_and(|m| n_leaves >= m) {
            break;
        }
        let bins = &data.bins[p.split.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            p.rows.iter().partition(|&&i| bins[i] <= p.split.bin);
        let left = nodes.len();
        nodes.push(leaf(&left_rows));
        nodes.push(leaf(&right_rows));
        nodes[p.node] = Node::Split {
            feature: p.split.feature,
            threshold: p.split.threshold,
            left,
            right: left + 1,
        };
        importance[p.split.feature] += p.split.decrease;
        n_leaves += 1;
        for (node, rows) in [(left, left_rows), (left + 1, right_rows)] {
            if let Some(split) = grower.best_split(&rows, &mut rng) {
                order += 1;
                heap.push(Pending {
                    decrease: split.decrease,
                    order,
                    node,
                    rows,
                    split,
                });
            }
        }
    }
    (Tree { nodes }, importance)
}

/// Fits `params.ntree` trees in parallel; tree `t` draws from its own
/// stream of the seeded generator, so the forest does not depend on the
/// thread count.
pub fn fit_random_forest(
    x: &Matrix,
    y: &[bool],
    params: ForestParams,
    seed: u64,
) -> Result<RandomForestModel, ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.rows(),
            found: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(ModelError::Empty);
    }
    params.validate(x.cols())?;
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParameter(
            "non-finite feature value".into(),
        ));
    }
    let data = Binned::new(x);
    let grown: Vec<(Tree, Vec<f64>)> = (0..params.ntree)
        .into_par_iter()
        .map(|t| grow_tree(&data, y, params, seed, t))
        .collect();
    let mut importances = vec![0.0; x.cols()];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importances.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(RandomForestModel {
        params,
        seed,
        n_features: x.cols(),
        trees,
        importances,
    })
}

/// Mean over trees of the leaf positive fraction.
pub fn rf_predict_proba(model: &RandomForestModel, x: &Matrix) -> Result<Vec<f64>, ModelError> {
    check_width(x, model.n_features)?;
    Ok(x.iter_rows()
        .map(|row| {
            model.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / model.trees.len() as f64
        })
        .collect())
}

/// `(feature, importance)` by descending importance, ties in column order.
pub fn rf_importances(model: &RandomForestModel) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = model.importances.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
