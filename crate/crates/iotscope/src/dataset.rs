//! Labeled samples, train/test splitting, and feature standardization.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flowmeter::{FeatureVector, NUM_FEATURES};
use crate::rng::SplitMix64;

/// The six device categories, with stable integer codes 0-5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CategoryLabel {
    Surveillance,
    Hub,
    EnergyManagement,
    Appliance,
    StreamingDevices,
    NonIoT,
}

pub const NUM_CLASSES: usize = 6;

pub const ALL_LABELS: [CategoryLabel; NUM_CLASSES] = [
    CategoryLabel::Surveillance,
    CategoryLabel::Hub,
    CategoryLabel::EnergyManagement,
    CategoryLabel::Appliance,
    CategoryLabel::StreamingDevices,
    CategoryLabel::NonIoT,
];

impl CategoryLabel {
    pub fn code(self) -> usize {
        match self {
            CategoryLabel::Surveillance => 0,
            CategoryLabel::Hub => 1,
            CategoryLabel::EnergyManagement => 2,
            CategoryLabel::Appliance => 3,
            CategoryLabel::StreamingDevices => 4,
            CategoryLabel::NonIoT => 5,
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        ALL_LABELS.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CategoryLabel::Surveillance => "Surveillance",
            CategoryLabel::Hub => "Hub",
            CategoryLabel::EnergyManagement => "EnergyManagement",
            CategoryLabel::Appliance => "Appliance",
            CategoryLabel::StreamingDevices => "StreamingDevices",
            CategoryLabel::NonIoT => "NonIoT",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        ALL_LABELS.iter().copied().find(|l| l.name() == name)
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a sample came from: capture file plus flow index within it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleOrigin {
    pub capture: String,
    pub flow_index: usize,
}

impl fmt::Display for SampleOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.capture, self.flow_index)
    }
}

/// One labeled feature row.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: CategoryLabel,
    pub origin: SampleOrigin,
}

/// A collection of labeled samples sharing one feature schema.
///
/// The canonical pipeline uses the 63-column flow schema; model tests
/// may build lower-dimensional datasets directly.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub n_features: usize,
    pub samples: Vec<LabeledSample>,
    pub schema_version: u32,
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class {label} has only {count} samples (need at least {need})")]
    ClassTooSmall { label: CategoryLabel, count: usize, need: usize },

    #[error("train_fraction must be in (0, 1), got {0}")]
    BadFraction(f64),

    #[error("sample has {got} features, dataset schema has {want}")]
    SchemaMismatch { got: usize, want: usize },

    #[error("{path}: {message}")]
    Csv { path: String, message: String },
}

impl Dataset {
    pub fn new(n_features: usize) -> Self {
        Dataset { n_features, samples: Vec::new(), schema_version: SCHEMA_VERSION }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: LabeledSample) -> Result<(), DatasetError> {
        if sample.features.len() != self.n_features {
            return Err(DatasetError::SchemaMismatch {
                got: sample.features.len(),
                want: self.n_features,
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Builds a dataset from raw rows; handy for model tests.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<CategoryLabel>) -> Self {
        assert_eq!(rows.len(), labels.len());
        let n_features = rows.first().map(|r| r.len()).unwrap_or(0);
        let samples = rows
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (features, label))| LabeledSample {
                features,
                label,
                origin: SampleOrigin { capture: "mem".into(), flow_index: i },
            })
            .collect();
        Dataset { n_features, samples, schema_version: SCHEMA_VERSION }
    }

    /// Number of samples per class, keyed by label.
    pub fn class_counts(&self) -> BTreeMap<CategoryLabel, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.samples {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }

    /// Appends all samples of `other`; schemas must match.
    pub fn merge(&mut self, other: Dataset) -> Result<(), DatasetError> {
        if self.n_features == 0 && self.samples.is_empty() {
            self.n_features = other.n_features;
        }
        if other.n_features != self.n_features && !other.samples.is_empty() {
            return Err(DatasetError::SchemaMismatch {
                got: other.n_features,
                want: self.n_features,
            });
        }
        self.samples.extend(other.samples);
        Ok(())
    }

    pub fn labels(&self) -> Vec<CategoryLabel> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Attaches one label (and one origin capture name) to a batch of
/// extracted feature vectors.
pub fn label_flows(
    features: &[FeatureVector],
    label: CategoryLabel,
    origin: &str,
) -> Dataset {
    let mut ds = Dataset::new(NUM_FEATURES);
    for (i, f) in features.iter().enumerate() {
        ds.samples.push(LabeledSample {
            features: f.as_slice().to_vec(),
            label,
            origin: SampleOrigin { capture: origin.to_string(), flow_index: i },
        });
    }
    ds
}

/// Round-half-up, the pinned rounding for stratified counts.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Per-class shuffled index order, the shared primitive behind the
/// stratified split and stratified fold assignment. Class `c`'s shuffle
/// is seeded with `seed + code(c)`.
fn shuffled_class_indices(
    ds: &Dataset,
    seed: u64,
) -> BTreeMap<CategoryLabel, Vec<usize>> {
    let mut by_class: BTreeMap<CategoryLabel, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    for (label, indices) in by_class.iter_mut() {
        let mut rng = SplitMix64::new(seed.wrapping_add(label.code() as u64));
        rng.shuffle(indices);
    }
    by_class
}

/// Stratified train/test split.
///
/// Each class contributes `round_half_up(train_fraction * n_c)` samples
/// to the training set (capped at `n_c - 1` so every class keeps at
/// least one test sample), chosen by a seeded per-class shuffle.
/// Output order follows the original dataset order.
pub fn stratified_split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    if ds.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    for (label, count) in ds.class_counts() {
        if count < 2 {
            return Err(DatasetError::ClassTooSmall { label, count, need: 2 });
        }
    }

    let mut in_train = vec![false; ds.len()];
    for (_, indices) in shuffled_class_indices(ds, seed) {
        let n_c = indices.len();
        let take = round_half_up(train_fraction * n_c as f64).min(n_c - 1);
        for &i in indices.iter().take(take) {
            in_train[i] = true;
        }
    }

    let mut train = Dataset::new(ds.n_features);
    let mut test = Dataset::new(ds.n_features);
    for (i, s) in ds.samples.iter().enumerate() {
        if in_train[i] {
            train.samples.push(s.clone());
        } else {
            test.samples.push(s.clone());
        }
    }
    Ok((train, test))
}

/// Stratified fold assignment for k-fold cross-validation: per class,
/// the seeded shuffle order is dealt round-robin over folds. Returns
/// `fold_of[i]` for each sample.
pub fn stratified_folds(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<usize>, DatasetError> {
    assert!(folds >= 2, "need at least 2 folds");
    for (label, count) in ds.class_counts() {
        if count < folds {
            return Err(DatasetError::ClassTooSmall { label, count, need: folds });
        }
    }
    let mut fold_of = vec![0usize; ds.len()];
    for (_, indices) in shuffled_class_indices(ds, seed) {
        for (pos, &i) in indices.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    Ok(fold_of)
}

/// Per-column standardization parameters fitted on training data.
/// Zero-variance columns store a deviation of 1 so they pass through
/// centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Fits per-column mean and population standard deviation.
pub fn fit_scaler(train: &Dataset) -> Result<Scaler, DatasetError> {
    if train.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let n = train.len() as f64;
    let d = train.n_features;
    let mut means = vec![0.0; d];
    for s in &train.samples {
        for (m, x) in means.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let mut stds = vec![0.0; d];
    for s in &train.samples {
        for ((v, x), m) in stds.iter_mut().zip(&s.features).zip(&means) {
            let dx = x - m;
            *v += dx * dx;
        }
    }
    for v in stds.iter_mut() {
        *v = (*v / n).sqrt();
        if *v == 0.0 {
            *v = 1.0;
        }
    }
    Ok(Scaler { means, stds })
}

impl Scaler {
    /// `(x - mean) / std` per column.
    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Inverse transform, `x * std + mean`.
    pub fn invert(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    /// Standardizes every sample of a dataset.
    pub fn apply_dataset(&self, ds: &Dataset) -> Dataset {
        let samples = ds
            .samples
            .iter()
            .map(|s| LabeledSample {
                features: self.apply(&s.features),
                label: s.label,
                origin: s.origin.clone(),
            })
            .collect();
        Dataset { n_features: ds.n_features, samples, schema_version: ds.schema_version }
    }
}
