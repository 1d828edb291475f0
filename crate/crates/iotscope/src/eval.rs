//! Classification metrics, stratified k-fold cross-validation, and
//! exhaustive grid search.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    stratified_folds, CategoryLabel, Dataset, DatasetError, ALL_LABELS, NUM_CLASSES,
};
use crate::models::{
    ForestParams, KnnParams, MlpParams, ModelError, ModelKind, ModelSpec,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("predictions ({predictions}) and truths ({truths}) differ in length")]
    LengthMismatch { predictions: usize, truths: usize },

    #[error("cannot evaluate an empty input")]
    EmptyInput,

    #[error(transparent)]
    Dataset(#[from] DatasetError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("unknown parameter '{name}' for model kind {kind:?}")]
    UnknownParameter { name: String, kind: ModelKind },

    #[error("parameter '{name}': {detail}")]
    BadParameterValue { name: String, detail: String },

    #[error("every grid point failed; first error: {first_error}")]
    AllGridPointsFailed { first_error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics over one prediction run. Rows of `confusion` are true
/// classes, columns are predictions. Macro metrics average over all six
/// classes (absent classes contribute their 0-defined metrics); weighted
/// metrics weight by true-class support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub confusion: [[u32; NUM_CLASSES]; NUM_CLASSES],
    pub n_samples: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Computes the confusion matrix and derived metrics.
pub fn evaluate(
    predictions: &[CategoryLabel],
    truths: &[CategoryLabel],
) -> Result<EvalReport, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }

    let mut confusion = [[0u32; NUM_CLASSES]; NUM_CLASSES];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[t.code()][p.code()] += 1;
    }
    let n = predictions.len() as f64;
    let trace: u32 = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();

    let mut per_class = [ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 }; NUM_CLASSES];
    let mut weighted = (0.0, 0.0, 0.0);
    for c in 0..NUM_CLASSES {
        let tp = confusion[c][c] as f64;
        let row: f64 = confusion[c].iter().sum::<u32>() as f64;
        let col: f64 = (0..NUM_CLASSES).map(|r| confusion[r][c]).sum::<u32>() as f64;
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        per_class[c] = ClassMetrics { precision, recall, f1 };
        weighted.0 += row * precision;
        weighted.1 += row * recall;
        weighted.2 += row * f1;
    }

    let macro_of = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(f).sum::<f64>() / NUM_CLASSES as f64
    };
    Ok(EvalReport {
        accuracy: trace as f64 / n,
        per_class,
        macro_precision: macro_of(|m| m.precision),
        macro_recall: macro_of(|m| m.recall),
        macro_f1: macro_of(|m| m.f1),
        weighted_precision: weighted.0 / n,
        weighted_recall: weighted.1 / n,
        weighted_f1: weighted.2 / n,
        confusion,
        n_samples: predictions.len(),
    })
}

impl EvalReport {
    /// Human-readable table with class-name headers.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        use fmt::Write;
        writeln!(out, "samples: {}", self.n_samples).unwrap();
        writeln!(out, "accuracy: {:.4}", self.accuracy).unwrap();
        writeln!(out, "{:<18} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1").unwrap();
        for label in ALL_LABELS {
            let m = &self.per_class[label.code()];
            writeln!(
                out,
                "{:<18} {:>9.4} {:>9.4} {:>9.4}",
                label.name(),
                m.precision,
                m.recall,
                m.f1
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<18} {:>9.4} {:>9.4} {:>9.4}",
            "macro", self.macro_precision, self.macro_recall, self.macro_f1
        )
        .unwrap();
        writeln!(
            out,
            "{:<18} {:>9.4} {:>9.4} {:>9.4}",
            "weighted", self.weighted_precision, self.weighted_recall, self.weighted_f1
        )
        .unwrap();
        writeln!(out, "\nconfusion matrix (rows = true, cols = predicted):").unwrap();
        write!(out, "{:<18}", "").unwrap();
        for label in ALL_LABELS {
            write!(out, "{:>10}", &label.name()[..label.name().len().min(9)]).unwrap();
        }
        out.push('\n');
        for t in ALL_LABELS {
            write!(out, "{:<18}", t.name()).unwrap();
            for p in ALL_LABELS {
                write!(out, "{:>10}", self.confusion[t.code()][p.code()]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per-fold reports plus their mean accuracy.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub mean_accuracy: f64,
    pub fold_reports: Vec<EvalReport>,
}

/// Stratified k-fold cross-validation. Each fold's model is trained
/// from scratch on the remaining folds (the scaler is re-fit inside the
/// trainer, so no information leaks from the held-out fold).
pub fn cross_validate(
    ds: &Dataset,
    spec: &ModelSpec,
    folds: usize,
    seed: u64,
) -> Result<CvResult, EvalError> {
    let fold_of = stratified_folds(ds, folds, seed)?;
    let mut fold_reports = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut train = Dataset::new(ds.n_features);
        let mut test = Dataset::new(ds.n_features);
        for (i, s) in ds.samples.iter().enumerate() {
            if fold_of[i] == fold {
                test.samples.push(s.clone());
            } else {
                train.samples.push(s.clone());
            }
        }
        let model = spec.train(&train)?;
        let predictions: Vec<CategoryLabel> =
            test.samples.iter().map(|s| model.predict(&s.features)).collect();
        fold_reports.push(evaluate(&predictions, &test.labels())?);
    }
    let mean_accuracy =
        fold_reports.iter().map(|r| r.accuracy).sum::<f64>() / fold_reports.len() as f64;
    Ok(CvResult { mean_accuracy, fold_reports })
}

/// One grid value; integers and reals cover every tunable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
}

impl ParamValue {
    fn as_usize(self, name: &str) -> Result<usize, EvalError> {
        match self {
            ParamValue::Int(i) if i >= 0 => Ok(i as usize),
            _ => Err(EvalError::BadParameterValue {
                name: name.to_string(),
                detail: format!("expected a non-negative integer, got {self:?}"),
            }),
        }
    }

    fn as_f64(self) -> f64 {
        match self {
            ParamValue::Int(i) => i as f64,
            ParamValue::Float(f) => f,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
        }
    }
}

/// A grid-search request: the Cartesian product of `grid` is evaluated
/// by cross-validation. Iteration order is pinned: parameters sorted by
/// name (the map order), values in the given order, later names varying
/// fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub model_kind: ModelKind,
    pub grid: BTreeMap<String, Vec<ParamValue>>,
    pub folds: usize,
    pub seed: u64,
}

/// One evaluated grid point. Points whose training fails (for example a
/// fold too small for the requested k) keep their slot in the table with
/// the error recorded and never win.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub overrides: BTreeMap<String, ParamValue>,
    pub spec: ModelSpec,
    pub mean_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: GridPoint,
    pub table: Vec<GridPoint>,
}

fn base_spec(kind: ModelKind, seed: u64) -> ModelSpec {
    match kind {
        ModelKind::Forest => ModelSpec::Forest(ForestParams { seed, ..Default::default() }),
        ModelKind::Mlp => ModelSpec::Mlp(MlpParams { seed, ..Default::default() }),
        ModelKind::Knn => ModelSpec::Knn(KnnParams::default()),
    }
}

fn apply_override(spec: &mut ModelSpec, name: &str, value: ParamValue) -> Result<(), EvalError> {
    let unknown = |kind: ModelKind| EvalError::UnknownParameter { name: name.to_string(), kind };
    match spec {
        ModelSpec::Forest(p) => match name {
            "n_trees" => p.n_trees = value.as_usize(name)?,
            "max_features" => p.max_features = value.as_usize(name)?,
            "max_depth" => p.max_depth = Some(value.as_usize(name)? as u32),
            "min_samples_leaf" => p.min_samples_leaf = value.as_usize(name)?,
            _ => return Err(unknown(ModelKind::Forest)),
        },
        ModelSpec::Mlp(p) => match name {
            "hidden_neurons" => p.hidden_neurons = value.as_usize(name)?,
            "learning_rate" => p.learning_rate = value.as_f64(),
            "batch_size" => p.batch_size = value.as_usize(name)?,
            "max_epochs" => p.max_epochs = value.as_usize(name)?,
            _ => return Err(unknown(ModelKind::Mlp)),
        },
        ModelSpec::Knn(p) => match name {
            "k" => p.k = value.as_usize(name)?,
            "minkowski_p" => p.minkowski_p = value.as_f64(),
            _ => return Err(unknown(ModelKind::Knn)),
        },
    }
    Ok(())
}

/// Evaluates every grid point and returns the winner (highest mean
/// accuracy, ties to the earliest point).
pub fn grid_search(ds: &Dataset, spec: &GridSpec) -> Result<GridSearchResult, EvalError> {
    assert!(!spec.grid.is_empty(), "grid must be nonempty");
    let names: Vec<&String> = spec.grid.keys().collect();
    let sizes: Vec<usize> = names.iter().map(|n| spec.grid[*n].len()).collect();
    for (name, len) in names.iter().zip(&sizes) {
        assert!(*len > 0, "parameter '{name}' has no values");
    }
    let total: usize = sizes.iter().product();

    let mut table = Vec::with_capacity(total);
    let mut cursor = vec![0usize; names.len()];
    for _ in 0..total {
        let mut overrides = BTreeMap::new();
        let mut point_spec = base_spec(spec.model_kind, spec.seed);
        for (slot, name) in names.iter().enumerate() {
            let value = spec.grid[*name][cursor[slot]];
            overrides.insert((*name).clone(), value);
            apply_override(&mut point_spec, name, value)?;
        }
        let point = match cross_validate(ds, &point_spec, spec.folds, spec.seed) {
            Ok(cv) => GridPoint {
                overrides,
                spec: point_spec,
                mean_accuracy: Some(cv.mean_accuracy),
                error: None,
            },
            Err(e) => GridPoint {
                overrides,
                spec: point_spec,
                mean_accuracy: None,
                error: Some(e.to_string()),
            },
        };
        table.push(point);

        // Odometer: the last (lexicographically largest) name ticks fastest.
        for slot in (0..cursor.len()).rev() {
            cursor[slot] += 1;
            if cursor[slot] < sizes[slot] {
                break;
            }
            cursor[slot] = 0;
        }
    }

    let mut best: Option<&GridPoint> = None;
    for point in &table {
        if let Some(acc) = point.mean_accuracy {
            if best.and_then(|b| b.mean_accuracy).is_none_or(|b| acc > b) {
                best = Some(point);
            }
        }
    }
    match best {
        Some(b) => Ok(GridSearchResult { best: b.clone(), table }),
        None => Err(EvalError::AllGridPointsFailed {
            first_error: table
                .first()
                .and_then(|p| p.error.clone())
                .unwrap_or_else(|| "empty grid".into()),
        }),
    }
}
