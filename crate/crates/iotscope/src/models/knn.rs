//! K-nearest-neighbours over the standardized training matrix.
//!
//! Neighbours are ranked by Minkowski-p distance with ties broken by
//! the lower training index; the kd-tree and brute-force backends are
//! required to return identical neighbour lists. The `Auto` algorithm
//! picks the kd-tree for datasets of at most 20 features and brute
//! force above that. Majority voting is uniform; vote ties prefer the
//! class with the smaller summed true distance, then the lowest code.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::dataset::{fit_scaler, CategoryLabel, Dataset, Scaler, NUM_CLASSES};

/// Feature-count threshold at or below which `Auto` picks the kd-tree.
pub const KDTREE_MAX_DIMS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnWeights {
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnAlgorithm {
    Auto,
    BruteForce,
    KdTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnParams {
    pub k: usize,
    pub weights: KnnWeights,
    pub algorithm: KnnAlgorithm,
    pub minkowski_p: f64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: 5,
            weights: KnnWeights::Uniform,
            algorithm: KnnAlgorithm::Auto,
            minkowski_p: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    pub params: KnnParams,
    pub scaler: Scaler,
    pub n_features: usize,
    /// Standardized training matrix.
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<CategoryLabel>,
    resolved: KnnAlgorithm,
    tree: Option<KdTree>,
}

#[derive(Serialize, Deserialize)]
struct KnnPayload {
    n_features: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<CategoryLabel>,
}

pub fn train_knn(train: &Dataset, params: KnnParams) -> Result<KnnModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if params.k == 0 {
        return Err(ModelError::InvalidParams("k must be >= 1".into()));
    }
    if params.minkowski_p < 1.0 {
        return Err(ModelError::InvalidParams("minkowski_p must be >= 1".into()));
    }
    if train.len() < params.k {
        return Err(ModelError::TooFewSamples { got: train.len(), need: params.k });
    }
    let scaler = fit_scaler(train).map_err(|_| ModelError::EmptyDataset)?;
    let points: Vec<Vec<f64>> = train.samples.iter().map(|s| scaler.apply(&s.features)).collect();
    let labels: Vec<CategoryLabel> = train.labels();
    Ok(KnnModel::assemble(params, scaler, train.n_features, points, labels))
}

impl KnnModel {
    fn assemble(
        params: KnnParams,
        scaler: Scaler,
        n_features: usize,
        points: Vec<Vec<f64>>,
        labels: Vec<CategoryLabel>,
    ) -> Self {
        let resolved = match params.algorithm {
            KnnAlgorithm::Auto => {
                if n_features <= KDTREE_MAX_DIMS {
                    KnnAlgorithm::KdTree
                } else {
                    KnnAlgorithm::BruteForce
                }
            }
            other => other,
        };
        let tree = match resolved {
            KnnAlgorithm::KdTree => Some(KdTree::build(&points, n_features)),
            _ => None,
        };
        KnnModel { params, scaler, n_features, points, labels, resolved, tree }
    }

    pub(super) fn payload(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::to_value(KnnPayload {
            n_features: self.n_features,
            points: self.points.clone(),
            labels: self.labels.clone(),
        })
    }

    pub(super) fn from_parts(
        params: KnnParams,
        scaler: Scaler,
        payload: serde_json::Value,
    ) -> Result<Self, ModelError> {
        let p: KnnPayload = serde_json::from_value(payload)
            .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
        Ok(KnnModel::assemble(params, scaler, p.n_features, p.points, p.labels))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The backend actually in use after `Auto` resolution.
    pub fn algorithm(&self) -> KnnAlgorithm {
        self.resolved
    }

    /// The k nearest training indices for one raw feature row, nearest
    /// first.
    pub fn neighbors(&self, features: &[f64]) -> Vec<usize> {
        let q = self.scaler.apply(features);
        self.neighbors_scaled(&q)
    }

    fn neighbors_scaled(&self, q: &[f64]) -> Vec<usize> {
        let p = self.params.minkowski_p;
        let k = self.params.k;
        let mut best = match (&self.tree, self.resolved) {
            (Some(tree), KnnAlgorithm::KdTree) => tree.nearest(&self.points, q, k, p),
            _ => {
                let mut all: Vec<Candidate> = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, pt)| Candidate { dist: reduced_distance(q, pt, p), index: i })
                    .collect();
                all.sort();
                all.truncate(k);
                all
            }
        };
        best.sort();
        best.into_iter().map(|c| c.index).collect()
    }

    /// Predicts one raw feature row, returning the label and the k
    /// neighbour indices in rank order.
    pub fn predict(&self, features: &[f64]) -> (CategoryLabel, Vec<usize>) {
        let q = self.scaler.apply(features);
        let neighbors = self.neighbors_scaled(&q);
        let p = self.params.minkowski_p;

        let mut votes = [0usize; NUM_CLASSES];
        let mut dist_sum = [0.0f64; NUM_CLASSES];
        for &i in &neighbors {
            let code = self.labels[i].code();
            votes[code] += 1;
            dist_sum[code] += reduced_distance(q, &self.points[i], p).powf(1.0 / p);
        }
        let mut best = 0usize;
        for c in 1..NUM_CLASSES {
            let better = votes[c] > votes[best]
                || (votes[c] == votes[best] && votes[c] > 0 && dist_sum[c] < dist_sum[best]);
            if better {
                best = c;
            }
        }
        (CategoryLabel::from_code(best).unwrap(), neighbors)
    }
}

/// Sum of |a_i - b_i|^p: monotone in the true Minkowski distance, so
/// rankings agree without taking the p-th root.
pub fn reduced_distance(a: &[f64], b: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y).abs().powf(p);
    }
    acc
}

/// (distance, index) with full ordering; lower index wins distance ties.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Classic kd-tree storing one point per node, splitting on dimensions
/// cyclically by depth with median pivots.
#[derive(Debug, Clone)]
struct KdTree {
    nodes: Vec<KdNode>,
    root: i32,
    n_features: usize,
}

#[derive(Debug, Clone, Copy)]
struct KdNode {
    point: usize,
    dim: usize,
    left: i32,
    right: i32,
}

impl KdTree {
    fn build(points: &[Vec<f64>], n_features: usize) -> Self {
        let mut tree = KdTree { nodes: Vec::with_capacity(points.len()), root: -1, n_features };
        let mut indices: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build_rec(points, &mut indices, 0);
        tree
    }

    fn build_rec(&mut self, points: &[Vec<f64>], indices: &mut [usize], depth: usize) -> i32 {
        if indices.is_empty() {
            return -1;
        }
        let dim = depth % self.n_features;
        indices.sort_by(|&a, &b| points[a][dim].total_cmp(&points[b][dim]).then(a.cmp(&b)));
        let mid = indices.len() / 2;
        let point = indices[mid];
        let at = self.nodes.len() as i32;
        self.nodes.push(KdNode { point, dim, left: -1, right: -1 });
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(points, lo, depth + 1);
        let right = self.build_rec(points, hi, depth + 1);
        self.nodes[at as usize].left = left;
        self.nodes[at as usize].right = right;
        at
    }

    fn nearest(&self, points: &[Vec<f64>], q: &[f64], k: usize, p: f64) -> Vec<Candidate> {
        // Max-heap of the k best candidates; the peek is the current worst.
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, points, q, k, p, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        at: i32,
        points: &[Vec<f64>],
        q: &[f64],
        k: usize,
        p: f64,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if at < 0 {
            return;
        }
        let node = self.nodes[at as usize];
        let cand = Candidate { dist: reduced_distance(q, &points[node.point], p), index: node.point };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand < *worst {
                heap.pop();
                heap.push(cand);
            }
        }

        let axis_delta = q[node.dim] - points[node.point][node.dim];
        let (near, far) = if axis_delta <= 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, points, q, k, p, heap);

        // Visit the far side unless the splitting plane alone is already
        // farther than the current worst candidate (non-strict keeps
        // boundary ties exact).
        let axis_reduced = axis_delta.abs().powf(p);
        let must_visit = heap.len() < k
            || heap.peek().is_none_or(|worst| axis_reduced <= worst.dist);
        if must_visit {
            self.search(far, points, q, k, p, heap);
        }
    }
}
