//! Losses over batches, analytic gradients, optimizers and the training
//! loop.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{argmax, cross_entropy_unchecked, entropy, kl_unchecked, ln_floor};
use super::mlp::{softmax_rows, DropoutMask, Gradients, Mlp};
use crate::data::{Dataset, SoftLabelSet};
use crate::error::{Error, Result};

/// Rows processed per chunk in evaluation-only passes.
pub(crate) const EVAL_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    KlDivergence,
}

/// Hyperparameters of one training run.
///
/// `temperature` divides the logits inside the loss; label smoothing and the
/// confidence penalty only apply to the cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub confidence_penalty: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            weight_decay: 0.0,
            dropout_rate: 0.0,
            label_smoothing: 0.0,
            confidence_penalty: 0.0,
            seed: 0,
            loss: LossKind::CrossEntropy,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("dropout_rate must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::invalid("label_smoothing must lie in [0, 1)"));
        }
        if !(self.confidence_penalty >= 0.0) {
            return Err(Error::invalid("confidence_penalty must be nonnegative"));
        }
        super::loss::check_temperature(self.temperature)?;
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::invalid("adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Labels(&'a [usize]),
    Soft(ArrayView2<'a, f64>),
}

impl Targets<'_> {
    fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Soft(s) => s.nrows(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: Targets<'a>,
}

/// Training data: hard labels for cross-entropy, soft labels for KL.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Labeled(&'a Dataset),
    Soft(&'a SoftLabelSet),
}

impl<'a> From<&'a Dataset> for TrainData<'a> {
    fn from(d: &'a Dataset) -> Self {
        TrainData::Labeled(d)
    }
}

impl<'a> From<&'a SoftLabelSet> for TrainData<'a> {
    fn from(s: &'a SoftLabelSet) -> Self {
        TrainData::Soft(s)
    }
}

impl<'a> TrainData<'a> {
    fn inputs(&self) -> ArrayView2<'a, f64> {
        match *self {
            TrainData::Labeled(d) => d.features().view(),
            TrainData::Soft(s) => s.inputs().view(),
        }
    }

    fn len(&self) -> usize {
        self.inputs().nrows()
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, OwnedTargets) {
        let x = self.inputs().select(Axis(0), idx);
        let t = match *self {
            TrainData::Labeled(d) => OwnedTargets::Labels(idx.iter().map(|&i| d.labels()[i]).collect()),
            TrainData::Soft(s) => OwnedTargets::Soft(s.soft_labels().select(Axis(0), idx)),
        };
        (x, t)
    }
}

enum OwnedTargets {
    Labels(Vec<usize>),
    Soft(Array2<f64>),
}

impl OwnedTargets {
    fn view(&self) -> Targets<'_> {
        match self {
            OwnedTargets::Labels(l) => Targets::Labels(l),
            OwnedTargets::Soft(s) => Targets::Soft(s.view()),
        }
    }
}

fn check_batch(model: &Mlp, batch: &Batch, cfg: &TrainConfig, mask: Option<&DropoutMask>) -> Result<()> {
    let n = batch.inputs.nrows();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if batch.targets.len() != n {
        return Err(Error::invalid("inputs and targets differ in length"));
    }
    model.check_batch(batch.inputs, mask)?;
    let c = model.n_classes();
    match (batch.targets, cfg.loss) {
        (Targets::Labels(labels), LossKind::CrossEntropy) => {
            if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
                return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
            }
        }
        (Targets::Soft(s), LossKind::KlDivergence) => {
            if s.ncols() != c {
                return Err(Error::invalid(format!(
                    "soft targets have {} classes, model has {c}",
                    s.ncols()
                )));
            }
        }
        (Targets::Labels(_), LossKind::KlDivergence) => {
            return Err(Error::invalid("kl_divergence loss needs soft-label targets"))
        }
        (Targets::Soft(_), LossKind::CrossEntropy) => {
            return Err(Error::invalid("cross_entropy loss needs class-index targets"))
        }
    }
    Ok(())
}

/// Mean loss of the batch and its gradient with respect to the logits.
fn loss_and_dlogits(logits: &Array2<f64>, targets: Targets, cfg: &TrainConfig) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let t = cfg.temperature;
    let mut probs = logits.clone();
    softmax_rows(&mut probs, t);
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut total = 0.0;
    let scale = 1.0 / (n as f64 * t);
    for (i, (p, mut g)) in probs.rows().into_iter().zip(grad.rows_mut()).enumerate() {
        let p = p.as_slice().expect("contiguous row");
        match targets {
            Targets::Labels(labels) => {
                let y = labels[i];
                let ls = cfg.label_smoothing;
                let cp = cfg.confidence_penalty;
                total += cross_entropy_unchecked(p, y, ls, cp);
                let off = ls / p.len() as f64;
                let h = if cp != 0.0 { entropy(p) } else { 0.0 };
                for (j, (gj, &pj)) in g.iter_mut().zip(p).enumerate() {
                    let q = if j == y { 1.0 - ls + off } else { off };
                    let mut d = pj - q;
                    if cp != 0.0 {
                        d += cp * pj * (ln_floor(pj) + h);
                    }
                    *gj = d * scale;
                }
            }
            Targets::Soft(soft) => {
                let target = soft.row(i);
                let target = target.to_vec();
                total += kl_unchecked(&target, p);
                let mass: f64 = target.iter().sum();
                for ((gj, &pj), &tj) in g.iter_mut().zip(p).zip(&target) {
                    *gj = (mass * pj - tj) * scale;
                }
            }
        }
    }
    (total / n as f64, grad)
}

/// Exact gradients of the mean batch loss plus `weight_decay / 2 * |W|^2`
/// (biases are not decayed). Dropout multipliers, when given, are held fixed.
pub fn backward(model: &Mlp, batch: Batch, cfg: &TrainConfig, mask: Option<&DropoutMask>) -> Result<Gradients> {
    check_batch(model, &batch, cfg, mask)?;
    Ok(backward_unchecked(model, batch, cfg, mask).1)
}

fn backward_unchecked(model: &Mlp, batch: Batch, cfg: &TrainConfig, mask: Option<&DropoutMask>) -> (f64, Gradients) {
    let trace = model.forward_trace(batch.inputs, mask);
    let (loss, dlogits) = loss_and_dlogits(&trace.logits, batch.targets, cfg);
    let mut grads = model.backward_trace(&trace, dlogits);
    if cfg.weight_decay != 0.0 {
        for (g, l) in grads.weights.iter_mut().zip(model.layers()) {
            g.scaled_add(cfg.weight_decay, l.weights());
        }
    }
    (loss, grads)
}

/// The objective whose gradient [`backward`] returns.
pub fn batch_objective(model: &Mlp, batch: Batch, cfg: &TrainConfig, mask: Option<&DropoutMask>) -> Result<f64> {
    check_batch(model, &batch, cfg, mask)?;
    let trace = model.forward_trace(batch.inputs, mask);
    let (loss, _) = loss_and_dlogits(&trace.logits, batch.targets, cfg);
    let decay: f64 = model
        .layers()
        .iter()
        .map(|l| l.weights().iter().map(|w| w * w).sum::<f64>())
        .sum();
    Ok(loss + 0.5 * cfg.weight_decay * decay)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Gradients,
    v: Gradients,
}

impl OptimizerState {
    fn new(model: &Mlp, cfg: &TrainConfig) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            step: 0,
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
        }
    }

    fn apply(&mut self, model: &mut Mlp, g: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            Optimizer::Sgd => {
                for (l, (gw, gb)) in model.layers_mut().iter_mut().zip(g.weights.iter().zip(&g.biases)) {
                    l.weights.scaled_add(-lr, gw);
                    l.bias.scaled_add(-lr, gb);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let update = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (i, l) in model.layers_mut().iter_mut().enumerate() {
                    ndarray::Zip::from(&mut l.weights)
                        .and(&g.weights[i])
                        .and(&mut self.m.weights[i])
                        .and(&mut self.v.weights[i])
                        .for_each(|w, &g, m, v| update(w, g, m, v));
                    ndarray::Zip::from(&mut l.bias)
                        .and(&g.biases[i])
                        .and(&mut self.m.biases[i])
                        .and(&mut self.v.biases[i])
                        .for_each(|w, &g, m, v| update(w, g, m, v));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    /// Mean minibatch loss of each epoch (without the weight-decay term).
    pub epoch_losses: Vec<f64>,
}

/// Minibatch training from `model` as the starting point. Shuffling and
/// dropout draw from a generator seeded with `cfg.seed`.
pub fn train<'a>(model: &Mlp, data: impl Into<TrainData<'a>>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_excluding(model, data.into(), cfg, None)
}

/// Training where one sample index is skipped. The epoch permutation is
/// drawn over the full index range and the excluded index is removed from
/// its minibatch, so every other batch is identical to the full run.
pub(crate) fn train_excluding(
    model: &Mlp,
    data: TrainData,
    cfg: &TrainConfig,
    excluded: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("training data is empty"));
    }
    if let Some(e) = excluded {
        if e >= n {
            return Err(Error::invalid(format!("excluded index {e} out of range for {n} samples")));
        }
        if n < 2 {
            return Err(Error::invalid("cannot exclude the only training sample"));
        }
    }
    match (data, cfg.loss) {
        (TrainData::Labeled(_), LossKind::KlDivergence) => {
            return Err(Error::invalid("kl_divergence loss needs a soft-label set"))
        }
        (TrainData::Soft(_), LossKind::CrossEntropy) => {
            return Err(Error::invalid("cross_entropy loss needs a labeled dataset"))
        }
        _ => {}
    }
    // Validate shapes and labels once on the whole set.
    let all: Vec<usize> = (0..n).collect();
    {
        let (x, t) = data.gather(&all[..1]);
        check_batch(model, &Batch { inputs: x.view(), targets: t.view() }, cfg, None)?;
        if let TrainData::Labeled(d) = data {
            if let Some(&bad) = d.labels().iter().find(|&&y| y >= model.n_classes()) {
                return Err(Error::invalid(format!("label {bad} out of range for model")));
            }
        }
    }

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(&model, cfg);
    let mut order = all;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut idx = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            idx.clear();
            idx.extend(chunk.iter().copied().filter(|&i| Some(i) != excluded));
            if idx.is_empty() {
                continue;
            }
            let (x, t) = data.gather(&idx);
            let mask = (cfg.dropout_rate > 0.0)
                .then(|| DropoutMask::sample(&model, idx.len(), cfg.dropout_rate, &mut rng));
            let batch = Batch { inputs: x.view(), targets: t.view() };
            let (loss, grads) = backward_unchecked(&model, batch, cfg, mask.as_ref());
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            opt.apply(&mut model, &grads);
            sum += loss * idx.len() as f64;
            count += idx.len();
        }
        let mean = sum / count as f64;
        if !mean.is_finite() || model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean plain cross-entropy at the evaluation temperature.
    pub mean_loss: f64,
}

/// Argmax accuracy and mean cross-entropy at `temperature`.
pub fn evaluate(model: &Mlp, data: &Dataset, temperature: f64) -> Result<Evaluation> {
    super::loss::check_temperature(temperature)?;
    if data.is_empty() {
        return Err(Error::invalid("evaluation data is empty"));
    }
    model.check_batch(data.features().view(), None)?;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let mut z = model.logits_unchecked(data.features().slice(ndarray::s![start..end, ..]));
        softmax_rows(&mut z, temperature);
        for (row, &y) in z.rows().into_iter().zip(&data.labels()[start..end]) {
            let p = row.as_slice().expect("contiguous row");
            if y >= p.len() {
                return Err(Error::invalid(format!("label {y} out of range for model")));
            }
            if argmax(p) == y {
                correct += 1;
            }
            loss -= ln_floor(p[y]);
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss / data.len() as f64,
    })
}

/// Per-layer and total L2 norms of a single sample's loss gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNorms {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

/// Gradient norms of the plain cross-entropy loss (T = 1, no regularizers)
/// at one labeled sample.
pub fn grad_norms(model: &Mlp, x: &[f64], y: usize) -> Result<GradNorms> {
    let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(per_sample_grad_norms(model, row, &[y])?.remove(0))
}

/// [`grad_norms`] for every row. A dense layer's per-sample weight gradient
/// is the outer product `delta a^T`, so its squared norm factors as
/// `|delta|^2 (|a|^2 + 1)` including the bias.
pub fn per_sample_grad_norms(model: &Mlp, x: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<GradNorms>> {
    if x.nrows() != labels.len() {
        return Err(Error::invalid("inputs and labels differ in length"));
    }
    model.check_batch(x, None)?;
    let c = model.n_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut out = Vec::with_capacity(labels.len());
    for start in (0..labels.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(labels.len());
        let trace = model.forward_trace(x.slice(ndarray::s![start..end, ..]), None);
        let mut d = trace.logits.clone();
        softmax_rows(&mut d, 1.0);
        for (mut row, &y) in d.rows_mut().into_iter().zip(&labels[start..end]) {
            row[y] -= 1.0;
        }
        let deltas = model.deltas(&trace, d);
        for i in 0..end - start {
            let per_layer: Vec<f64> = deltas
                .iter()
                .zip(&trace.inputs)
                .map(|(delta, a)| {
                    let dd: f64 = delta.row(i).iter().map(|v| v * v).sum();
                    let aa: f64 = a.row(i).iter().map(|v| v * v).sum();
                    (dd * (aa + 1.0)).sqrt()
                })
                .collect();
            let total = per_layer.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.push(GradNorms { per_layer, total });
        }
    }
    Ok(out)
}
