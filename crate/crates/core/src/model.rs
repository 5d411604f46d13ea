//! Small multiclass classifier trained with mini-batch SGD.
//!
//! The default model is multinomial logistic regression. Setting
//! `hidden_units > 0` inserts one tanh hidden layer. Parameters live in a
//! single flat vector so that FedAvg can treat every model the same way.
//!
//! Layout (row-major): `W1 [H x D], b1 [H], W2 [C x H], b2 [C]` with a
//! hidden layer, `W [C x D], b [C]` without one.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, LabeledExample};
use crate::error::{Error, Result};
use crate::seed::rng;

/// Layer shapes plus the fixed input rescaling applied before the first
/// layer (`x' = (x - input_offset) * input_scale`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_dim: usize,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub input_offset: f64,
    pub input_scale: f64,
}

impl ModelShape {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_units: 0,
            num_classes,
            input_offset: 0.0,
            input_scale: 1.0,
        }
    }

    pub fn with_hidden(self, hidden_units: usize) -> Self {
        Self {
            hidden_units,
            ..self
        }
    }

    pub fn with_input_normalization(self, offset: f64, scale: f64) -> Self {
        Self {
            input_offset: offset,
            input_scale: scale,
            ..self
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_units);
        if h > 0 {
            h * d + h + c * h + c
        } else {
            c * d + c
        }
    }

    /// Whether flat index `i` holds a bias term.
    pub fn is_bias(&self, i: usize) -> bool {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_units);
        if h > 0 {
            let b1 = h * d..h * d + h;
            let b2_start = h * d + h + c * h;
            b1.contains(&i) || (b2_start..b2_start + c).contains(&i)
        } else {
            (c * d..c * d + c).contains(&i)
        }
    }
}

/// Flat model weights plus the shape they describe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub values: Vec<f64>,
    pub shape: ModelShape,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, shape: ModelShape) -> Result<Self> {
        if values.len() != shape.param_count() {
            return Err(Error::Protocol(format!(
                "{} values for a shape holding {}",
                values.len(),
                shape.param_count()
            )));
        }
        Ok(Self { values, shape })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            values: vec![0.0; shape.param_count()],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Weights uniform in `[-0.05, 0.05]`, biases zero.
pub fn init_params(shape: ModelShape, seed: u64) -> ParameterVector {
    let mut r = rng(seed);
    let values = (0..shape.param_count())
        .map(|i| {
            if shape.is_bias(i) {
                0.0
            } else {
                r.gen_range(-0.05..=0.05)
            }
        })
        .collect();
    ParameterVector { values, shape }
}

fn default_epochs() -> usize {
    10
}
fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffle.
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "train.learning_rate",
                "must be a non-negative finite number",
            ));
        }
        Ok(())
    }
}

/// Scratch buffers for a forward/backward pass.
struct Workspace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Workspace {
    fn new(shape: &ModelShape) -> Self {
        Self {
            input: vec![0.0; shape.input_dim],
            hidden: vec![0.0; shape.hidden_units],
            logits: vec![0.0; shape.num_classes],
        }
    }
}

fn affine(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, (row, b)) in out.iter_mut().zip(weights.chunks_exact(n_in).zip(bias)) {
        let mut acc = *b;
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *o = acc;
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn forward(params: &ParameterVector, features: &[f64], ws: &mut Workspace) {
    let s = &params.shape;
    let (d, h, c) = (s.input_dim, s.hidden_units, s.num_classes);
    for (dst, &x) in ws.input.iter_mut().zip(features) {
        *dst = (x - s.input_offset) * s.input_scale;
    }
    let v = &params.values;
    if h > 0 {
        let (w1, rest) = v.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        affine(w1, b1, &ws.input, &mut ws.hidden);
        ws.hidden.iter_mut().for_each(|a| *a = a.tanh());
        affine(w2, b2, &ws.hidden, &mut ws.logits);
    } else {
        let (w, b) = v.split_at(c * d);
        affine(w, b, &ws.input, &mut ws.logits);
    }
}

/// Accumulates the cross-entropy gradient of one example into `grad` and
/// returns its loss. `ws` must hold the forward pass for `example`.
fn backward(
    params: &ParameterVector,
    example: &LabeledExample,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let s = &params.shape;
    let (d, h, c) = (s.input_dim, s.hidden_units, s.num_classes);
    let label_mass: f64 = example.label.iter().sum();
    let mut loss = 0.0;
    let lse = log_sum_exp(&ws.logits);
    for (z, &y) in ws.logits.iter().zip(&example.label) {
        loss += y * (lse - z);
    }
    // dL/dz_k = mass * p_k - y_k; ws.logits becomes the logit gradient
    for (z, &y) in ws.logits.iter_mut().zip(&example.label) {
        *z = label_mass * (*z - lse).exp() - y;
    }
    let delta = &ws.logits;
    if h > 0 {
        let w2_start = h * d + h;
        let b2_start = w2_start + c * h;
        let mut dhidden = vec![0.0; h];
        for k in 0..c {
            let row = w2_start + k * h;
            for j in 0..h {
                grad[row + j] += delta[k] * ws.hidden[j];
                dhidden[j] += delta[k] * params.values[row + j];
            }
            grad[b2_start + k] += delta[k];
        }
        for j in 0..h {
            let dz = dhidden[j] * (1.0 - ws.hidden[j] * ws.hidden[j]);
            let row = j * d;
            for i in 0..d {
                grad[row + i] += dz * ws.input[i];
            }
            grad[h * d + j] += dz;
        }
    } else {
        for k in 0..c {
            let row = k * d;
            for i in 0..d {
                grad[row + i] += delta[k] * ws.input[i];
            }
            grad[c * d + k] += delta[k];
        }
    }
    loss
}

fn check_batch(params: &ParameterVector, batch: &[&LabeledExample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let s = &params.shape;
    for ex in batch {
        if ex.features.len() != s.input_dim || ex.label.len() != s.num_classes {
            return Err(Error::Precondition(format!(
                "example with {} features / {} classes does not fit model {}x{}",
                ex.features.len(),
                ex.label.len(),
                s.input_dim,
                s.num_classes
            )));
        }
    }
    Ok(())
}

/// Mean cross-entropy over `batch` and its gradient with respect to every
/// parameter. Summation runs in batch order.
pub fn loss_and_gradient(
    params: &ParameterVector,
    batch: &[&LabeledExample],
) -> Result<(f64, Vec<f64>)> {
    check_batch(params, batch)?;
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::new(&params.shape);
    let mut loss = 0.0;
    for ex in batch {
        forward(params, &ex.features, &mut ws);
        loss += backward(params, ex, &mut ws, &mut grad);
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Mean cross-entropy over `data`.
pub fn mean_loss(params: &ParameterVector, data: &[LabeledExample]) -> Result<f64> {
    let refs: Vec<&LabeledExample> = data.iter().collect();
    check_batch(params, &refs)?;
    let mut ws = Workspace::new(&params.shape);
    let mut loss = 0.0;
    for ex in data {
        forward(params, &ex.features, &mut ws);
        let lse = log_sum_exp(&ws.logits);
        for (z, &y) in ws.logits.iter().zip(&ex.label) {
            loss -= y * (z - lse);
        }
    }
    Ok(loss / data.len() as f64)
}

/// Runs `cfg.epochs` passes of mini-batch SGD over `data`, reshuffling the
/// visiting order every epoch. The last batch of an epoch may be short.
pub fn train_local(
    params: &ParameterVector,
    data: &[LabeledExample],
    cfg: &TrainConfig,
) -> Result<ParameterVector> {
    if data.is_empty() {
        return Err(Error::Precondition("cannot train on empty data".into()));
    }
    if !params.is_finite() {
        return Err(Error::Precondition("non-finite input parameters".into()));
    }
    cfg.validate()?;
    let refs: Vec<&LabeledExample> = data.iter().collect();
    check_batch(params, &refs)?;

    let mut out = params.clone();
    let mut r = rng(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut ws = Workspace::new(&params.shape);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                forward(&out, &data[i].features, &mut ws);
                backward(&out, &data[i], &mut ws, &mut grad);
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            for (w, g) in out.values.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
    }
    if !out.is_finite() {
        return Err(Error::Precondition(
            "training diverged to non-finite parameters; lower the learning rate".into(),
        ));
    }
    Ok(out)
}

pub fn predict(params: &ParameterVector, features: &[f64]) -> usize {
    let mut ws = Workspace::new(&params.shape);
    forward(params, features, &mut ws);
    argmax(&ws.logits)
}

/// Overall and per-label accuracy of a model on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub overall_accuracy: f64,
    /// `None` for labels that do not occur in the evaluation set.
    pub per_label_accuracy: Vec<Option<f64>>,
    pub per_label_counts: Vec<usize>,
    pub per_label_correct: Vec<usize>,
}

impl EvalResult {
    pub fn from_counts(correct: Vec<usize>, counts: Vec<usize>) -> Self {
        let total: usize = counts.iter().sum();
        let hits: usize = correct.iter().sum();
        let per_label_accuracy = correct
            .iter()
            .zip(&counts)
            .map(|(&k, &n)| (n > 0).then(|| k as f64 / n as f64))
            .collect();
        Self {
            overall_accuracy: if total > 0 {
                hits as f64 / total as f64
            } else {
                0.0
            },
            per_label_accuracy,
            per_label_counts: counts,
            per_label_correct: correct,
        }
    }
}

pub fn evaluate(params: &ParameterVector, test: &[LabeledExample]) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::Precondition(
            "cannot evaluate on an empty set".into(),
        ));
    }
    let refs: Vec<&LabeledExample> = test.iter().collect();
    check_batch(params, &refs)?;
    let c = params.shape.num_classes;
    let mut correct = vec![0usize; c];
    let mut counts = vec![0usize; c];
    let mut ws = Workspace::new(&params.shape);
    for ex in test {
        forward(params, &ex.features, &mut ws);
        let truth = ex.class();
        counts[truth] += 1;
        if argmax(&ws.logits) == truth {
            correct[truth] += 1;
        }
    }
    Ok(EvalResult::from_counts(correct, counts))
}
