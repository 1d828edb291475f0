//! Random forest with Gini-split decision trees.
//!
//! Determinism contract: tree `t` draws its bootstrap sample and any
//! per-split feature subsets from `SplitMix64::new(seed + t)`, consumed
//! in depth-first build order (node, left subtree, right subtree), so
//! serial and tree-parallel training produce identical models. Splits
//! minimize weighted Gini impurity over candidate thresholds placed at
//! midpoints of consecutive distinct sorted values; ties prefer the
//! lowest feature index, then the lowest threshold.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax_tie_lowest, ModelError};
use crate::dataset::{fit_scaler, CategoryLabel, Dataset, Scaler, NUM_CLASSES};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features considered per split; clamped to the dataset width.
    /// The default (63) means every feature at every split.
    pub max_features: usize,
    pub max_depth: Option<u32>,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_features: 63,
            max_depth: None,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { class_counts: [u32; NUM_CLASSES] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Leaf class counts for one standardized row.
    fn leaf_counts(&self, x: &[f64]) -> &[u32; NUM_CLASSES] {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
                TreeNode::Leaf { class_counts } => return class_counts,
            }
        }
    }

    /// The tree's vote: majority class of the reached leaf, ties to the
    /// lowest class code.
    pub fn vote(&self, x: &[f64]) -> usize {
        let counts = self.leaf_counts(x);
        let as_f: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        argmax_tie_lowest(&as_f)
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    pub params: ForestParams,
    pub scaler: Scaler,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

#[derive(Serialize, Deserialize)]
struct ForestPayload {
    n_features: usize,
    trees: Vec<DecisionTree>,
}

impl ForestModel {
    pub(super) fn payload(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::to_value(ForestPayload {
            n_features: self.n_features,
            trees: self.trees.clone(),
        })
    }

    pub(super) fn from_parts(
        params: ForestParams,
        scaler: Scaler,
        payload: serde_json::Value,
    ) -> Result<Self, ModelError> {
        let p: ForestPayload = serde_json::from_value(payload)
            .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
        Ok(ForestModel { params, scaler, n_features: p.n_features, trees: p.trees })
    }

    /// Predicts one raw feature row, returning the winning label and the
    /// per-class vote tally.
    pub fn predict(&self, features: &[f64]) -> (CategoryLabel, [u32; NUM_CLASSES]) {
        let x = self.scaler.apply(features);
        let mut votes = [0u32; NUM_CLASSES];
        for tree in &self.trees {
            votes[tree.vote(&x)] += 1;
        }
        let as_f: Vec<f64> = votes.iter().map(|c| *c as f64).collect();
        let label = CategoryLabel::from_code(argmax_tie_lowest(&as_f)).unwrap();
        (label, votes)
    }
}

pub fn train_forest(train: &Dataset, params: ForestParams) -> Result<ForestModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if params.n_trees == 0 {
        return Err(ModelError::InvalidParams("n_trees must be >= 1".into()));
    }
    if params.max_features == 0 {
        return Err(ModelError::InvalidParams("max_features must be >= 1".into()));
    }
    let scaler = fit_scaler(train).map_err(|_| ModelError::EmptyDataset)?;
    let rows: Vec<Vec<f64>> = train.samples.iter().map(|s| scaler.apply(&s.features)).collect();
    let labels: Vec<usize> = train.samples.iter().map(|s| s.label.code()).collect();
    let n_features = train.n_features;
    let max_features = params.max_features.min(n_features);

    let trees: Vec<DecisionTree> = (0..params.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = SplitMix64::new(params.seed.wrapping_add(t));
            let n = rows.len();
            let bootstrap: Vec<usize> =
                (0..n).map(|_| rng.next_below(n as u64) as usize).collect();
            let mut builder = TreeBuilder {
                rows: &rows,
                labels: &labels,
                n_features,
                max_features,
                max_depth: params.max_depth,
                min_samples_leaf: params.min_samples_leaf.max(1),
                nodes: Vec::new(),
                rng,
            };
            builder.build(bootstrap, 0);
            DecisionTree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestModel { params, scaler, n_features, trees })
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [usize],
    n_features: usize,
    max_features: usize,
    max_depth: Option<u32>,
    min_samples_leaf: usize,
    nodes: Vec<TreeNode>,
    rng: SplitMix64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, indices: Vec<usize>, depth: u32) -> u32 {
        let counts = self.class_counts(&indices);
        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || indices.len() < 2 * self.min_samples_leaf {
            return self.leaf(counts);
        }
        match self.best_split(&indices) {
            None => self.leaf(counts),
            Some((feature, threshold)) => {
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                    indices.into_iter().partition(|&i| self.rows[i][feature] <= threshold);
                let at = self.nodes.len() as u32;
                self.nodes.push(TreeNode::Split { feature, threshold, left: 0, right: 0 });
                let left = self.build(left_idx, depth + 1);
                let right = self.build(right_idx, depth + 1);
                if let TreeNode::Split { left: l, right: r, .. } = &mut self.nodes[at as usize] {
                    *l = left;
                    *r = right;
                }
                at
            }
        }
    }

    fn leaf(&mut self, class_counts: [u32; NUM_CLASSES]) -> u32 {
        self.nodes.push(TreeNode::Leaf { class_counts });
        (self.nodes.len() - 1) as u32
    }

    fn class_counts(&self, indices: &[usize]) -> [u32; NUM_CLASSES] {
        let mut counts = [0u32; NUM_CLASSES];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Candidate features for one split, ascending. When every feature
    /// is considered the generator is not consumed.
    fn candidate_features(&mut self) -> Vec<usize> {
        if self.max_features >= self.n_features {
            return (0..self.n_features).collect();
        }
        let mut pool: Vec<usize> = (0..self.n_features).collect();
        for k in 0..self.max_features {
            let j = k + self.rng.next_below((self.n_features - k) as u64) as usize;
            pool.swap(k, j);
        }
        let mut chosen = pool[..self.max_features].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn best_split(&mut self, indices: &[usize]) -> Option<(usize, f64)> {
        let n = indices.len() as f64;
        let total = self.class_counts(indices);
        let mut best: Option<(f64, usize, f64)> = None;

        for feature in self.candidate_features() {
            let mut sorted: Vec<(f64, usize)> =
                indices.iter().map(|&i| (self.rows[i][feature], self.labels[i])).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = [0u32; NUM_CLASSES];
            let mut right = total;
            for (pos, (value, label)) in sorted.iter().enumerate() {
                left[*label] += 1;
                right[*label] -= 1;
                let next = match sorted.get(pos + 1) {
                    Some((v, _)) => *v,
                    None => break,
                };
                if next == *value {
                    continue;
                }
                let threshold = (value + next) / 2.0;
                // Guard against midpoint rounding collapsing a side.
                if !(*value <= threshold && threshold < next) {
                    continue;
                }
                let n_left = (pos + 1) as f64;
                let n_right = n - n_left;
                if (n_left as usize) < self.min_samples_leaf
                    || (n_right as usize) < self.min_samples_leaf
                {
                    continue;
                }
                let score = (n_left * gini(&left, n_left) + n_right * gini(&right, n_right)) / n;
                if best.map_or(true, |(b, _, _)| score < b) {
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, feature, threshold)| (feature, threshold))
    }
}

fn gini(counts: &[u32; NUM_CLASSES], n: f64) -> f64 {
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / n;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}
