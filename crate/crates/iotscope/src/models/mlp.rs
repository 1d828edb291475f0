//! Single-hidden-layer perceptron trained with mini-batch Adam on
//! softmax cross-entropy.
//!
//! Determinism contract: one `SplitMix64::new(seed)` stream initializes
//! the weights (w1 in index order, then w2), then drives the per-epoch
//! index shuffles. Weights start uniform in `(-1/sqrt(fan_in),
//! +1/sqrt(fan_in))`; biases start at zero. Batches are consecutive
//! chunks of the shuffled order, the trailing partial batch included.

use serde::{Deserialize, Serialize};

use super::{argmax_tie_lowest, ModelError};
use crate::dataset::{fit_scaler, CategoryLabel, Dataset, Scaler, NUM_CLASSES};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    pub hidden_layers: usize,
    pub hidden_neurons: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden_layers: 1,
            hidden_neurons: 100,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 200,
            seed: 0,
        }
    }
}

/// Weights: `w1[i * n_hidden + j]` connects input `i` to hidden `j`;
/// `w2[j * NUM_CLASSES + k]` connects hidden `j` to class `k`.
#[derive(Debug, Clone)]
pub struct MlpModel {
    pub params: MlpParams,
    pub scaler: Scaler,
    pub n_in: usize,
    pub n_hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpPayload {
    n_in: usize,
    n_hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// Gradients with the same layout as the model weights.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpModel {
    pub(super) fn payload(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::to_value(MlpPayload {
            n_in: self.n_in,
            n_hidden: self.n_hidden,
            w1: self.w1.clone(),
            b1: self.b1.clone(),
            w2: self.w2.clone(),
            b2: self.b2.clone(),
        })
    }

    pub(super) fn from_parts(
        params: MlpParams,
        scaler: Scaler,
        payload: serde_json::Value,
    ) -> Result<Self, ModelError> {
        let p: MlpPayload = serde_json::from_value(payload)
            .map_err(|e| ModelError::CorruptModelFile(e.to_string()))?;
        Ok(MlpModel {
            params,
            scaler,
            n_in: p.n_in,
            n_hidden: p.n_hidden,
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: p.b2,
        })
    }

    /// Hidden activations and logits for one standardized row.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, [f64; NUM_CLASSES]) {
        let h_dim = self.n_hidden;
        let mut hidden = self.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w1[i * h_dim..(i + 1) * h_dim];
            for (h, w) in hidden.iter_mut().zip(row) {
                *h += xi * w;
            }
        }
        for h in hidden.iter_mut() {
            if *h < 0.0 {
                *h = 0.0;
            }
        }
        let mut logits = [0.0; NUM_CLASSES];
        logits.copy_from_slice(&self.b2);
        for (j, &hj) in hidden.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &self.w2[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += hj * w;
            }
        }
        (hidden, logits)
    }

    /// Class probabilities for one raw feature row.
    pub fn predict_proba(&self, features: &[f64]) -> [f64; NUM_CLASSES] {
        let x = self.scaler.apply(features);
        let (_, logits) = self.forward(&x);
        softmax(&logits)
    }

    /// Predicts one raw feature row, returning the label and the
    /// softmax probabilities.
    pub fn predict(&self, features: &[f64]) -> (CategoryLabel, [f64; NUM_CLASSES]) {
        let probs = self.predict_proba(features);
        let label = CategoryLabel::from_code(argmax_tie_lowest(&probs)).unwrap();
        (label, probs)
    }

    /// Mean cross-entropy of a standardized batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let (_, logits) = self.forward(x);
            let probs = softmax(&logits);
            total -= log_prob(probs[y]);
        }
        total / xs.len() as f64
    }

    /// Mean cross-entropy and its gradients on a standardized batch.
    pub fn loss_and_gradients(&self, xs: &[Vec<f64>], ys: &[usize]) -> (f64, MlpGradients) {
        let h_dim = self.n_hidden;
        let mut g = MlpGradients {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; h_dim],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; NUM_CLASSES],
        };
        let inv_batch = 1.0 / xs.len() as f64;
        let mut total_loss = 0.0;

        for (x, &y) in xs.iter().zip(ys) {
            let (hidden, logits) = self.forward(x);
            let probs = softmax(&logits);
            total_loss -= log_prob(probs[y]);

            let mut dlogits = probs;
            dlogits[y] -= 1.0;
            for d in dlogits.iter_mut() {
                *d *= inv_batch;
            }

            for (k, &d) in dlogits.iter().enumerate() {
                g.b2[k] += d;
            }
            let mut dhidden = vec![0.0; h_dim];
            for (j, &hj) in hidden.iter().enumerate() {
                let w_row = &self.w2[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
                let g_row = &mut g.w2[j * NUM_CLASSES..(j + 1) * NUM_CLASSES];
                let mut acc = 0.0;
                for k in 0..NUM_CLASSES {
                    g_row[k] += hj * dlogits[k];
                    acc += w_row[k] * dlogits[k];
                }
                // ReLU gate: gradient flows only through active units.
                dhidden[j] = if hj > 0.0 { acc } else { 0.0 };
            }
            for (j, &dh) in dhidden.iter().enumerate() {
                if dh != 0.0 {
                    g.b1[j] += dh;
                }
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let g_row = &mut g.w1[i * h_dim..(i + 1) * h_dim];
                for (gw, &dh) in g_row.iter_mut().zip(&dhidden) {
                    *gw += xi * dh;
                }
            }
        }
        (total_loss * inv_batch, g)
    }
}

/// Log of a probability, clamped away from ln(0) but propagating NaN so
/// divergence stays detectable.
fn log_prob(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        p.max(f64::MIN_POSITIVE).ln()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn update(&mut self, weights: &mut [f64], grads: &[f64], p: &MlpParams, step: i32) {
        let bias1 = 1.0 - p.beta1.powi(step);
        let bias2 = 1.0 - p.beta2.powi(step);
        for i in 0..weights.len() {
            self.m[i] = p.beta1 * self.m[i] + (1.0 - p.beta1) * grads[i];
            self.v[i] = p.beta2 * self.v[i] + (1.0 - p.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            weights[i] -= p.learning_rate * m_hat / (v_hat.sqrt() + p.epsilon);
        }
    }
}

pub fn train_mlp(train: &Dataset, params: MlpParams) -> Result<MlpModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if params.hidden_layers != 1 {
        return Err(ModelError::InvalidParams(
            "only a single hidden layer is supported".into(),
        ));
    }
    if params.hidden_neurons == 0 || params.batch_size == 0 {
        return Err(ModelError::InvalidParams(
            "hidden_neurons and batch_size must be >= 1".into(),
        ));
    }

    let scaler = fit_scaler(train).map_err(|_| ModelError::EmptyDataset)?;
    let xs: Vec<Vec<f64>> = train.samples.iter().map(|s| scaler.apply(&s.features)).collect();
    let ys: Vec<usize> = train.samples.iter().map(|s| s.label.code()).collect();
    let n_in = train.n_features;
    let n_hidden = params.hidden_neurons;

    let mut rng = SplitMix64::new(params.seed);
    let bound1 = 1.0 / (n_in as f64).sqrt();
    let bound2 = 1.0 / (n_hidden as f64).sqrt();
    let mut model = MlpModel {
        w1: (0..n_in * n_hidden).map(|_| rng.next_range(-bound1, bound1)).collect(),
        b1: vec![0.0; n_hidden],
        w2: (0..n_hidden * NUM_CLASSES).map(|_| rng.next_range(-bound2, bound2)).collect(),
        b2: vec![0.0; NUM_CLASSES],
        params: params.clone(),
        scaler,
        n_in,
        n_hidden,
    };

    let mut adam_w1 = AdamState::new(model.w1.len());
    let mut adam_b1 = AdamState::new(model.b1.len());
    let mut adam_w2 = AdamState::new(model.w2.len());
    let mut adam_b2 = AdamState::new(model.b2.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut step = 0i32;

    for epoch in 0..params.max_epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(params.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&bx, &by);
            if !loss.is_finite() {
                return Err(ModelError::DivergenceDetected { epoch });
            }
            step += 1;
            adam_w1.update(&mut model.w1, &grads.w1, &params, step);
            adam_b1.update(&mut model.b1, &grads.b1, &params, step);
            adam_w2.update(&mut model.w2, &grads.w2, &params, step);
            adam_b2.update(&mut model.b2, &grads.b2, &params, step);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(code: usize) -> CategoryLabel {
        CategoryLabel::from_code(code).unwrap()
    }

    fn zero_model(n_in: usize, n_hidden: usize) -> MlpModel {
        MlpModel {
            params: MlpParams::default(),
            scaler: Scaler { means: vec![0.0; n_in], stds: vec![1.0; n_in] },
            n_in,
            n_hidden,
            w1: vec![0.0; n_in * n_hidden],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_hidden * NUM_CLASSES],
            b2: vec![0.0; NUM_CLASSES],
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = zero_model(4, 10);
        let (l, probs) = m.predict(&[1.0, -2.0, 0.5, 3.0]);
        for p in probs {
            assert!((p - 1.0 / 6.0).abs() < 1e-12);
        }
        assert_eq!(l, label(0)); // argmax tie resolves to the lowest code
    }

    #[test]
    fn softmax_of_ln2_logit() {
        let logits = [0.0, 0.0, (2.0f64).ln(), 0.0, 0.0, 0.0];
        let p = softmax(&logits);
        assert!((p[2] - 2.0 / 7.0).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_on_random_logits() {
        let mut rng = SplitMix64::new(123);
        for _ in 0..500 {
            let mut logits = [0.0; NUM_CLASSES];
            for l in logits.iter_mut() {
                *l = rng.next_range(-50.0, 50.0);
            }
            let p = softmax(&logits);
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(p.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn shifted_logits_keep_the_argmax() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..100 {
            let mut logits = [0.0; NUM_CLASSES];
            for l in logits.iter_mut() {
                *l = rng.next_range(-5.0, 5.0);
            }
            let shift = rng.next_range(-100.0, 100.0);
            let shifted: [f64; NUM_CLASSES] = std::array::from_fn(|i| logits[i] + shift);
            assert_eq!(
                argmax_tie_lowest(&softmax(&logits)),
                argmax_tie_lowest(&softmax(&shifted))
            );
        }
    }

    #[test]
    fn xor_is_learnable() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..50 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                rows.push(vec![a, b]);
                labels.push(label(if (a == 1.0) ^ (b == 1.0) { 1 } else { 0 }));
            }
        }
        let ds = Dataset::from_rows(rows, labels);
        let m = train_mlp(&ds, MlpParams { max_epochs: 60, seed: 1, ..Default::default() })
            .unwrap();
        let correct = ds
            .samples
            .iter()
            .filter(|s| m.predict(&s.features).0 == s.label)
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.99, "{correct}/{}", ds.len());
    }

    fn param_mut(m: &mut MlpModel, idx: usize) -> &mut f64 {
        let (w1, b1, w2) = (m.w1.len(), m.b1.len(), m.w2.len());
        if idx < w1 {
            &mut m.w1[idx]
        } else if idx < w1 + b1 {
            &mut m.b1[idx - w1]
        } else if idx < w1 + b1 + w2 {
            &mut m.w2[idx - w1 - b1]
        } else {
            &mut m.b2[idx - w1 - b1 - w2]
        }
    }

    fn grad_at(g: &MlpGradients, idx: usize) -> f64 {
        let (w1, b1, w2) = (g.w1.len(), g.b1.len(), g.w2.len());
        if idx < w1 {
            g.w1[idx]
        } else if idx < w1 + b1 {
            g.b1[idx - w1]
        } else if idx < w1 + b1 + w2 {
            g.w2[idx - w1 - b1]
        } else {
            g.b2[idx - w1 - b1 - w2]
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = SplitMix64::new(0xAB);
        let mut m = zero_model(5, 8);
        for w in m.w1.iter_mut().chain(m.w2.iter_mut()) {
            *w = rng.next_range(-0.8, 0.8);
        }
        for b in m.b1.iter_mut().chain(m.b2.iter_mut()) {
            *b = rng.next_range(-0.3, 0.3);
        }
        let xs: Vec<Vec<f64>> =
            (0..5).map(|_| (0..5).map(|_| rng.next_range(-2.0, 2.0)).collect()).collect();
        let ys: Vec<usize> = (0..5).map(|_| rng.next_below(6) as usize).collect();

        let (_, analytic) = m.loss_and_gradients(&xs, &ys);
        let h = 1e-5;
        let total = m.w1.len() + m.b1.len() + m.w2.len() + m.b2.len();
        let mut max_rel = 0.0f64;
        for idx in 0..total {
            let orig = *param_mut(&mut m, idx);
            *param_mut(&mut m, idx) = orig + h;
            let up = m.loss(&xs, &ys);
            *param_mut(&mut m, idx) = orig - h;
            let down = m.loss(&xs, &ys);
            *param_mut(&mut m, idx) = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = grad_at(&analytic, idx);
            let rel = (numeric - exact).abs() / (numeric.abs() + exact.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn divergence_is_reported() {
        let ds = Dataset::from_rows(
            vec![vec![1.0], vec![2.0]],
            vec![label(0), label(1)],
        );
        let err = train_mlp(
            &ds,
            MlpParams { learning_rate: f64::INFINITY, max_epochs: 2, ..Default::default() },
        );
        assert!(matches!(err, Err(ModelError::DivergenceDetected { .. })));
    }

    #[test]
    fn two_hidden_layers_are_rejected() {
        let ds = Dataset::from_rows(vec![vec![1.0]], vec![label(0)]);
        assert!(matches!(
            train_mlp(&ds, MlpParams { hidden_layers: 2, ..Default::default() }),
            Err(ModelError::InvalidParams(_))
        ));
    }
}
