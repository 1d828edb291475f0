//! From-scratch classifiers: random forest, multilayer perceptron, and
//! k-nearest neighbours, plus the versioned model file format.
//!
//! Every trainer fits the standard scaler on its training data and
//! embeds it in the model; prediction standardizes the query through
//! that scaler. Training is a pure function of (dataset, params), and
//! all tie-breaks are pinned: argmax ties resolve to the lowest class
//! code everywhere.

mod forest;
mod knn;
mod mlp;

pub use forest::{train_forest, DecisionTree, ForestModel, ForestParams, TreeNode};
pub use knn::{train_knn, KnnAlgorithm, KnnModel, KnnParams, KnnWeights};
pub use mlp::{train_mlp, Activation, MlpGradients, MlpModel, MlpParams, Optimizer};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryLabel, Dataset};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training set has {got} samples, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("training diverged: loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("model file has format_version {found}, this build reads {expected}")]
    SchemaVersionMismatch { found: u64, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Argmax with ties broken toward the lowest index.
pub(crate) fn argmax_tie_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A trained classifier of any kind.
#[derive(Debug, Clone)]
pub enum Model {
    Forest(ForestModel),
    Mlp(MlpModel),
    Knn(KnnModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Knn(_) => ModelKind::Knn,
        }
    }

    /// Predicts the label of one raw (unstandardized) feature row.
    pub fn predict(&self, features: &[f64]) -> CategoryLabel {
        match self {
            Model::Forest(m) => m.predict(features).0,
            Model::Mlp(m) => m.predict(features).0,
            Model::Knn(m) => m.predict(features).0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Mlp,
    Knn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
            ModelKind::Knn => "knn",
        }
    }
}

/// Training request: which model kind with which parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ModelSpec {
    Forest(ForestParams),
    Mlp(MlpParams),
    Knn(KnnParams),
}

impl ModelSpec {
    pub fn train(&self, ds: &Dataset) -> Result<Model, ModelError> {
        match self {
            ModelSpec::Forest(p) => Ok(Model::Forest(train_forest(ds, p.clone())?)),
            ModelSpec::Mlp(p) => Ok(Model::Mlp(train_mlp(ds, p.clone())?)),
            ModelSpec::Knn(p) => Ok(Model::Knn(train_knn(ds, p.clone())?)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Forest(_) => ModelKind::Forest,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
            ModelSpec::Knn(_) => ModelKind::Knn,
        }
    }
}

/// On-disk envelope: self-describing JSON with a format version.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model_kind: ModelKind,
    params: serde_json::Value,
    scaler: crate::dataset::Scaler,
    payload: serde_json::Value,
}

fn io_err(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::Io { path: path.display().to_string(), source: e }
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelError> {
    let corrupt = |e: serde_json::Error| ModelError::CorruptModelFile(e.to_string());
    let file = match model {
        Model::Forest(m) => ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model_kind: ModelKind::Forest,
            params: serde_json::to_value(&m.params).map_err(corrupt)?,
            scaler: m.scaler.clone(),
            payload: m.payload().map_err(corrupt)?,
        },
        Model::Mlp(m) => ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model_kind: ModelKind::Mlp,
            params: serde_json::to_value(&m.params).map_err(corrupt)?,
            scaler: m.scaler.clone(),
            payload: m.payload().map_err(corrupt)?,
        },
        Model::Knn(m) => ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model_kind: ModelKind::Knn,
            params: serde_json::to_value(&m.params).map_err(corrupt)?,
            scaler: m.scaler.clone(),
            payload: m.payload().map_err(corrupt)?,
        },
    };
    let out = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut writer, &file)
        .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
    writer.write_all(b"\n").map_err(|e| io_err(path, e))?;
    writer.flush().map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelError::CorruptModelFile("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as u64 {
        return Err(ModelError::SchemaVersionMismatch {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(value)
        .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
    let corrupt = |e: serde_json::Error| ModelError::CorruptModelFile(e.to_string());
    match file.model_kind {
        ModelKind::Forest => {
            let params = serde_json::from_value(file.params).map_err(corrupt)?;
            Ok(Model::Forest(ForestModel::from_parts(params, file.scaler, file.payload)?))
        }
        ModelKind::Mlp => {
            let params = serde_json::from_value(file.params).map_err(corrupt)?;
            Ok(Model::Mlp(MlpModel::from_parts(params, file.scaler, file.payload)?))
        }
        ModelKind::Knn => {
            let params = serde_json::from_value(file.params).map_err(corrupt)?;
            Ok(Model::Knn(KnnModel::from_parts(params, file.scaler, file.payload)?))
        }
    }
}
