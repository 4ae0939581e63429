//! Problem difficulty: empirical pass rates and a small probe that predicts
//! them from feature vectors.
//!
//! The probe is `sigmoid(w2 · tanh(W1ᵀx + b1) + b2)`, trained by mini-batch
//! gradient descent on soft-target binary cross-entropy. The loss uses the
//! logit directly (`softplus(z) - λz`), which is exact and never takes the log
//! of a saturated sigmoid.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hidden nonlinearity; smooth everywhere so finite differences are valid.
pub const ACTIVATION: &str = "tanh";
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum DifficultyError {
    #[error("no solutions evaluated for {0:?}")]
    NoSamples(String),
    #[error("feature dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite feature value")]
    NonFinite,
    #[error("target pass rate {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint is inconsistent: {0}")]
    BadCheckpoint(String),
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Last model with a finite loss, and the history up to it.
        partial: Box<TrainOutcome>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEstimate {
    pub problem_id: String,
    pub lambda: f64,
    pub n_samples: usize,
}

/// Pass rate of a problem: fraction of its solutions passing the gold suite.
pub fn estimate_lambda(problem_id: &str, passed: &[bool]) -> Result<DifficultyEstimate, DifficultyError> {
    if passed.is_empty() {
        return Err(DifficultyError::NoSamples(problem_id.to_string()));
    }
    let correct = passed.iter().filter(|&&p| p).count();
    Ok(DifficultyEstimate {
        problem_id: problem_id.to_string(),
        lambda: correct as f64 / passed.len() as f64,
        n_samples: passed.len(),
    })
}

/// Two-layer probe. `w1` is `input_dim × hidden` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub activation: String,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// One training example: features and a soft target in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub features: Vec<f64>,
    pub lambda: f64,
}

impl ProbeSample {
    pub fn new(features: Vec<f64>, lambda: f64) -> Self {
        Self { features, lambda }
    }
}

impl ProbeModel {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            activation: ACTIVATION.into(),
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(input_dim, hidden);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.gen_range(-a1..=a1));
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..=a2));
        m
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Flat parameter vector `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length");
        let (w1, rest) = p.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = b2[0];
    }

    fn check_input(&self, x: &[f64]) -> Result<(), DifficultyError> {
        if x.len() != self.input_dim {
            return Err(DifficultyError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DifficultyError::NonFinite);
        }
        Ok(())
    }

    /// Hidden activations and the output logit.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let h = self.hidden;
        let mut a = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.w1[k * h..(k + 1) * h];
            a.iter_mut().zip(row).for_each(|(aj, w)| *aj += xk * w);
        }
        a.iter_mut().for_each(|v| *v = v.tanh());
        let z = self.b2 + a.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>();
        (a, z)
    }

    /// Output logit `z`, so that the prediction is `sigmoid(z)`.
    pub fn logit(&self, x: &[f64]) -> Result<f64, DifficultyError> {
        self.check_input(x)?;
        Ok(self.forward(x).1)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DifficultyError> {
        let m: Self = serde_json::from_str(text).map_err(|e| DifficultyError::BadCheckpoint(e.to_string()))?;
        let bad = |what: &str| Err(DifficultyError::BadCheckpoint(what.to_string()));
        if m.activation != ACTIVATION {
            return bad("unsupported activation");
        }
        if m.w1.len() != m.input_dim * m.hidden || m.b1.len() != m.hidden || m.w2.len() != m.hidden {
            return bad("parameter shapes do not match dimensions");
        }
        Ok(m)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Predicted pass rate, always strictly inside (0, 1).
pub fn predict_lambda(model: &ProbeModel, x: &[f64]) -> Result<f64, DifficultyError> {
    let z = model.logit(x)?;
    Ok(sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

fn check_batch(model: &ProbeModel, batch: &[ProbeSample]) -> Result<(), DifficultyError> {
    for s in batch {
        model.check_input(&s.features)?;
        if !(0.0..=1.0).contains(&s.lambda) {
            return Err(DifficultyError::LambdaOutOfRange(s.lambda));
        }
    }
    Ok(())
}

/// Mean binary cross-entropy `-[λ log λ̂ + (1-λ) log(1-λ̂)]` over the batch;
/// 0 for an empty batch.
pub fn probe_loss(model: &ProbeModel, batch: &[ProbeSample]) -> Result<f64, DifficultyError> {
    check_batch(model, batch)?;
    Ok(loss_unchecked(model, batch))
}

fn loss_unchecked(model: &ProbeModel, batch: &[ProbeSample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|s| {
            let z = model.forward(&s.features).1;
            softplus(z) - s.lambda * z
        })
        .sum();
    total / batch.len() as f64
}

/// Analytic gradient of [`probe_loss`], laid out like [`ProbeModel::params`].
pub fn probe_grad(model: &ProbeModel, batch: &[ProbeSample]) -> Result<Vec<f64>, DifficultyError> {
    check_batch(model, batch)?;
    Ok(grad_unchecked(model, batch))
}

fn grad_unchecked(model: &ProbeModel, batch: &[ProbeSample]) -> Vec<f64> {
    let (d, h) = (model.input_dim, model.hidden);
    let mut g = vec![0.0; model.n_params()];
    if batch.is_empty() {
        return g;
    }
    let (g_w1, rest) = g.split_at_mut(d * h);
    let (g_b1, rest) = rest.split_at_mut(h);
    let (g_w2, g_b2) = rest.split_at_mut(h);
    let scale = 1.0 / batch.len() as f64;
    let mut dpre = vec![0.0; h];
    for s in batch {
        let (a, z) = model.forward(&s.features);
        let dz = (sigmoid(z) - s.lambda) * scale;
        g_b2[0] += dz;
        for j in 0..h {
            g_w2[j] += dz * a[j];
            dpre[j] = dz * model.w2[j] * (1.0 - a[j] * a[j]);
            g_b1[j] += dpre[j];
        }
        for (k, &xk) in s.features.iter().enumerate() {
            let row = &mut g_w1[k * h..(k + 1) * h];
            row.iter_mut().zip(&dpre).for_each(|(g, dp)| *g += xk * dp);
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight decay, applied to weights but not biases.
    pub l2: f64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            hidden_size: DEFAULT_HIDDEN,
            learning_rate: 0.1,
            epochs: 500,
            batch_size: 32,
            seed,
            l2: 0.0,
        }
    }

    fn validate(&self) -> Result<(), DifficultyError> {
        let bad = |m: &str| Err(DifficultyError::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 || self.batch_size == 0 {
            return bad("hidden_size and batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ProbeModel,
    /// Full-dataset loss after each epoch; entry 0 is the initial loss.
    pub history: Vec<f64>,
}

/// Mini-batch gradient descent from a seeded initialization. Batches are
/// reshuffled every epoch from the same seeded stream.
pub fn train_probe(dataset: &[ProbeSample], cfg: &TrainConfig) -> Result<TrainOutcome, DifficultyError> {
    cfg.validate()?;
    let first = dataset.first().ok_or(DifficultyError::EmptyDataset)?;
    let model = ProbeModel::init(first.features.len(), cfg.hidden_size, cfg.seed);
    train_from(model, dataset, cfg)
}

/// Like [`train_probe`] but starting from the given parameters.
pub fn train_from(
    mut model: ProbeModel,
    dataset: &[ProbeSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, DifficultyError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(DifficultyError::EmptyDataset);
    }
    check_batch(&model, dataset)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = vec![loss_unchecked(&model, dataset)];
    let n_weights = model.w1.len();
    let w2_range = n_weights + model.hidden..n_weights + 2 * model.hidden;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.epochs {
        let before = model.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let g = grad_unchecked(&model, &batch);
            let mut p = model.params();
            for (i, (pi, gi)) in p.iter_mut().zip(&g).enumerate() {
                let decay = if i < n_weights || w2_range.contains(&i) { cfg.l2 * *pi } else { 0.0 };
                *pi -= cfg.learning_rate * (gi + decay);
            }
            model.set_params(&p);
        }
        let loss = loss_unchecked(&model, dataset);
        if !loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(DifficultyError::Diverged {
                epoch,
                partial: Box::new(TrainOutcome { model: before, history }),
            });
        }
        history.push(loss);
    }
    Ok(TrainOutcome { model, history })
}

/// Mean binary entropy of the targets: the smallest loss any model can reach.
pub fn target_entropy(dataset: &[ProbeSample]) -> f64 {
    let h = |p: f64| {
        if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        }
    };
    dataset.iter().map(|s| h(s.lambda)).sum::<f64>() / dataset.len().max(1) as f64
}

/// CSV `epoch,loss`.
pub fn write_loss_csv<W: Write>(mut w: W, history: &[f64], provenance: Option<&crate::report::Provenance>) -> std::io::Result<()> {
    if let Some(p) = provenance {
        p.write_comment(&mut w)?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss"])?;
    for (epoch, loss) in history.iter().enumerate() {
        out.write_record([epoch.to_string(), format!("{loss:.9}")])?;
    }
    out.flush()
}
