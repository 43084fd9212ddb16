//! CART regression trees and a bootstrap-aggregated random forest.
//!
//! Trees split on the threshold that minimizes the summed squared error of
//! the two children. Candidate thresholds are midpoints between consecutive
//! distinct feature values; a sample goes left when `x <= threshold`. The
//! only regularizer is `min_samples_leaf`, there is no depth cap.
//!
//! A forest fits `tree_count` trees, each on its own with-replacement
//! resample of the training set, and predicts the mean of the tree outputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tx::{Features, LabeledExample, N_FEATURES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("cannot fit a tree on an empty training set")]
    Empty,
    #[error("invalid forest config: {0}")]
    InvalidConfig(&'static str),
    #[error("malformed tree: {0}")]
    MalformedTree(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    /// Draw `bootstrap_size` samples with replacement per tree.
    Resample,
    /// Fit every tree on the training set as given. Exists so tests can
    /// compare a one-tree forest with a directly fitted tree.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub tree_count: usize,
    pub min_samples_leaf: usize,
    pub max_features: usize,
    pub seed: u64,
    /// Per-tree resample size; `None` means the training-set size.
    pub bootstrap_size: Option<usize>,
    pub bootstrap: Bootstrap,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            tree_count: 500,
            min_samples_leaf: 5,
            max_features: (N_FEATURES / 3).max(1),
            seed: 0,
            bootstrap_size: None,
            bootstrap: Bootstrap::Resample,
        }
    }
}

impl ForestConfig {
    pub fn with_trees(tree_count: usize, min_samples_leaf: usize) -> Self {
        Self { tree_count, min_samples_leaf, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.tree_count == 0 {
            return Err(ForestError::InvalidConfig("tree_count must be at least 1"));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidConfig("min_samples_leaf must be at least 1"));
        }
        if !(1..=N_FEATURES).contains(&self.max_features) {
            return Err(ForestError::InvalidConfig("max_features must lie in 1..=7"));
        }
        if self.bootstrap_size == Some(0) {
            return Err(ForestError::InvalidConfig("bootstrap_size must be positive"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{} trees/{} samples", self.tree_count, self.min_samples_leaf)
    }
}

/// The five (tree count, minimum leaf size) variants compared in the sweep.
pub fn forest_variants() -> Vec<ForestConfig> {
    [(250, 5), (500, 5), (1000, 10), (1500, 15), (2000, 20)]
        .into_iter()
        .map(|(trees, leaf)| ForestConfig::with_trees(trees, leaf))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: u8, threshold: f64, left: u32, right: u32 },
    Leaf { prediction: f64, sample_count: u32 },
}

/// A fitted tree stored as an arena; node 0 is the root and every child index
/// is greater than its parent's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    /// Rebuilds a tree from an arena, checking that it forms a proper tree.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self, ForestError> {
        if nodes.is_empty() {
            return Err(ForestError::MalformedTree("no nodes"));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                TreeNode::Split { feature, threshold, left, right } => {
                    if feature as usize >= N_FEATURES {
                        return Err(ForestError::MalformedTree("feature index out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(ForestError::MalformedTree("non-finite threshold"));
                    }
                    for child in [left as usize, right as usize] {
                        if child <= i || child >= nodes.len() || referenced[child] {
                            return Err(ForestError::MalformedTree("bad child index"));
                        }
                        referenced[child] = true;
                    }
                }
                TreeNode::Leaf { prediction, sample_count } => {
                    if !prediction.is_finite() || sample_count == 0 {
                        return Err(ForestError::MalformedTree("bad leaf"));
                    }
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(ForestError::MalformedTree("unreachable node"));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn predict(&self, x: &Features) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { prediction, .. } => return prediction,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, u32)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            TreeNode::Leaf { prediction, sample_count } => Some((prediction, sample_count)),
            TreeNode::Split { .. } => None,
        })
    }
}

struct SplitChoice {
    sse: f64,
    feature: usize,
    threshold: f64,
}

impl SplitChoice {
    /// Lower SSE wins; exact ties go to the lower feature, then threshold.
    fn beats(&self, other: &SplitChoice) -> bool {
        (self.sse, self.feature, self.threshold) < (other.sse, other.feature, other.threshold)
    }
}

/// Best split of `idx` on one feature, or `None` if no threshold leaves at
/// least `min_leaf` samples on both sides. `buf` is scratch space.
fn best_split_on(
    examples: &[LabeledExample],
    idx: &[usize],
    feature: usize,
    center: f64,
    min_leaf: usize,
    buf: &mut Vec<(f64, f64)>,
) -> Option<SplitChoice> {
    let n = idx.len();
    buf.clear();
    buf.extend(idx.iter().map(|&i| (examples[i].features[feature], examples[i].label_blocks - center)));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if buf[0].0 == buf[n - 1].0 {
        return None;
    }
    let (total, total_sq) = buf.iter().fold((0.0, 0.0), |(s, q), &(_, y)| (s + y, q + y * y));
    let (mut left, mut left_sq) = (0.0, 0.0);
    let mut best: Option<SplitChoice> = None;
    for i in 1..n {
        let y = buf[i - 1].1;
        left += y;
        left_sq += y * y;
        if i < min_leaf || n - i < min_leaf {
            continue;
        }
        let (lo, hi) = (buf[i - 1].0, buf[i].0);
        if lo == hi {
            continue;
        }
        let right = total - left;
        let right_sq = total_sq - left_sq;
        let nl = i as f64;
        let nr = (n - i) as f64;
        let sse = (left_sq - left * left / nl) + (right_sq - right * right / nr);
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        let cand = SplitChoice { sse, feature, threshold };
        if best.as_ref().map_or(true, |b| cand.beats(b)) {
            best = Some(cand);
        }
    }
    best
}

/// Fits one regression tree. At every node up to `max_features` features,
/// chosen at random, are searched; features that are constant within the
/// node do not count towards that budget.
pub fn fit_tree<R: Rng + ?Sized>(
    examples: &[LabeledExample],
    min_samples_leaf: usize,
    max_features: usize,
    rng: &mut R,
) -> Result<Tree, ForestError> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    fit_tree_on(examples, idx, min_samples_leaf, max_features, rng)
}

fn fit_tree_on<R: Rng + ?Sized>(
    examples: &[LabeledExample],
    mut idx: Vec<usize>,
    min_samples_leaf: usize,
    max_features: usize,
    rng: &mut R,
) -> Result<Tree, ForestError> {
    if idx.is_empty() {
        return Err(ForestError::Empty);
    }
    if min_samples_leaf == 0 || !(1..=N_FEATURES).contains(&max_features) {
        return Err(ForestError::InvalidConfig("min_samples_leaf >= 1 and 1 <= max_features <= 7"));
    }
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut buf = Vec::with_capacity(idx.len());
    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    // (node slot, start, end) ranges into `idx`.
    let mut stack = vec![(0usize, 0usize, idx.len())];
    nodes.push(TreeNode::Leaf { prediction: 0.0, sample_count: 0 });

    while let Some((slot, start, end)) = stack.pop() {
        let part = &mut idx[start..end];
        let n = part.len();
        let mean = part.iter().map(|&i| examples[i].label_blocks).sum::<f64>() / n as f64;
        let parent_sse: f64 = part
            .iter()
            .map(|&i| (examples[i].label_blocks - mean).powi(2))
            .sum();

        let first_label = examples[part[0]].label_blocks;
        let pure = part.iter().all(|&i| examples[i].label_blocks == first_label);
        let mut best: Option<SplitChoice> = None;
        if !pure && n >= 2 * min_samples_leaf {
            order.shuffle(rng);
            let mut searched = 0;
            for &feature in &order {
                if searched == max_features {
                    break;
                }
                let first = examples[part[0]].features[feature];
                if part.iter().all(|&i| examples[i].features[feature] == first) {
                    continue;
                }
                searched += 1;
                if let Some(c) = best_split_on(examples, part, feature, mean, min_samples_leaf, &mut buf) {
                    if best.as_ref().map_or(true, |b| c.beats(b)) {
                        best = Some(c);
                    }
                }
            }
        }

        match best {
            Some(split) if split.sse < parent_sse * (1.0 - 1e-12) => {
                let f = split.feature;
                let mut lo = 0;
                for k in 0..n {
                    if examples[part[k]].features[f] <= split.threshold {
                        part.swap(lo, k);
                        lo += 1;
                    }
                }
                let left = nodes.len();
                nodes.push(TreeNode::Leaf { prediction: 0.0, sample_count: 0 });
                nodes.push(TreeNode::Leaf { prediction: 0.0, sample_count: 0 });
                nodes[slot] = TreeNode::Split {
                    feature: f as u8,
                    threshold: split.threshold,
                    left: left as u32,
                    right: left as u32 + 1,
                };
                stack.push((left + 1, start + lo, end));
                stack.push((left, start, start + lo));
            }
            _ => {
                nodes[slot] = TreeNode::Leaf { prediction: mean, sample_count: n as u32 };
            }
        }
    }
    Ok(Tree { nodes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
    /// Seed used for each tree's resample and feature draws.
    pub tree_seeds: Vec<u64>,
}

pub fn fit_forest(examples: &[LabeledExample], config: &ForestConfig) -> Result<Forest, ForestError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(ForestError::Empty);
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let tree_seeds: Vec<u64> = (0..config.tree_count).map(|_| master.gen()).collect();
    let n = examples.len();
    let draw = config.bootstrap_size.unwrap_or(n);
    let trees = tree_seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = match config.bootstrap {
                Bootstrap::Resample => (0..draw).map(|_| rng.gen_range(0..n)).collect(),
                Bootstrap::Identity => (0..n).collect(),
            };
            fit_tree_on(examples, idx, config.min_samples_leaf, config.max_features, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Forest { trees, config: config.clone(), tree_seeds })
}

impl Forest {
    pub fn predict(&self, x: &Features) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn tree_predictions(&self, x: &Features) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }
}

pub fn predict_forest(forest: &Forest, x: &Features) -> f64 {
    forest.predict(x)
}
