//! SGD training, evaluation and gate statistics for the toy benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Model;
use crate::calib::CalibratorKind;
use crate::error::{config_err, Error, Result};
use crate::ops::Mode;
use crate::param::Parameters;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};
use crate::toybench::data::{batch, SyntheticClip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate on the validation set every this many steps (0 = only at the end).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 800, batch_size: 8, lr: 0.05, momentum: 0.9, weight_decay: 1e-4, seed: 0, eval_every: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be positive"));
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Learning rate at `step`: decays by 10x at 50% and again at 75% of the run.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut lr = self.lr;
        if 2 * step >= self.steps {
            lr *= 0.1;
        }
        if 4 * step >= 3 * self.steps {
            lr *= 0.1;
        }
        lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Accuracy on the training batch.
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// `(step, validation accuracy)`.
    pub evals: Vec<(usize, f64)>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,acc\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.step, r.loss, r.acc);
        }
        s
    }
}

/// Mean softmax cross-entropy over the batch, its gradient w.r.t. the logits,
/// and the number of correct argmax predictions.
pub fn softmax_cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<(f64, Tensor<F>, usize)> {
    let s = logits.shape();
    let (n, k) = (s.n(), s.c());
    if s.volume() != 1 || labels.len() != n {
        return Err(config_err!("logits {s} do not match {} labels", labels.len()));
    }
    let mut grad = vec![F::zero(); n * k];
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(config_err!("label {y} out of range for {k} classes"));
        }
        let row: Vec<f64> = logits.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += z.ln() + max - row[y];
        if argmax(&row) == y {
            correct += 1;
        }
        for j in 0..k {
            let p = (row[j] - max).exp() / z;
            let t = if j == y { 1.0 } else { 0.0 };
            grad[i * k + j] = F::from_f64_lossy((p - t) / n as f64);
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(Shape::new(n, 1, 1, 1, k), grad)?, correct))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// SGD with momentum and coupled weight decay:
/// `v = mu * v + g + wd * w; w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<F> {
    velocity: Vec<Vec<F>>,
}

impl<F: Real> Sgd<F> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    pub fn step<P: Parameters<F>>(&mut self, model: &mut P, lr: f64, momentum: f64, weight_decay: f64) {
        let (lr, mu, wd) = (F::from_f64_lossy(lr), F::from_f64_lossy(momentum), F::from_f64_lossy(weight_decay));
        let mut i = 0;
        let velocity = &mut self.velocity;
        model.visit_mut("", &mut |_, p| {
            if !p.is_learned() {
                return;
            }
            if velocity.len() <= i {
                velocity.push(vec![F::zero(); p.len()]);
            }
            let v = &mut velocity[i];
            for ((w, g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vel = mu * *vel + *g + wd * *w;
                *w -= lr * *vel;
            }
            i += 1;
        });
    }
}

impl<F: Real> Default for Sgd<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Trains `model` on `train`, optionally evaluating on `val`.
pub fn train<F: Real>(
    model: &mut Model<F>,
    train: &[SyntheticClip],
    val: Option<&[SyntheticClip]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() && cfg.steps > 0 {
        return Err(config_err!("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut opt = Sgd::new();
    let mut log = TrainLog::default();
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let clips: Vec<&SyntheticClip> = idx.iter().map(|&i| &train[i]).collect();
        let (x, labels) = batch::<F>(&clips)?;
        model.zero_grad();
        let logits = model.forward(&x, Mode::Train)?;
        let (loss, grad, correct) = softmax_cross_entropy(&logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, loss });
        }
        model.backward(&grad)?;
        opt.step(model, cfg.lr_at(step), cfg.momentum, cfg.weight_decay);
        log.steps.push(StepRecord { step, loss, acc: correct as f64 / labels.len() as f64 });
        if let Some(v) = val {
            let last = step + 1 == cfg.steps;
            if last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
                log.evals.push((step + 1, evaluate(model, v)?.accuracy));
            }
        }
    }
    Ok(log)
}

/// Clips per inference batch.
pub const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub counts: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// Scores predictions against labels for `num_classes` classes.
    pub fn from_predictions(predictions: Vec<usize>, labels: &[usize], num_classes: usize) -> Self {
        let mut hits = vec![0usize; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            counts[y] += 1;
            if p == y {
                hits[y] += 1;
            }
        }
        let total: usize = hits.iter().sum();
        Evaluation {
            accuracy: total as f64 / labels.len().max(1) as f64,
            per_class: hits.iter().zip(&counts).map(|(&h, &c)| h as f64 / c.max(1) as f64).collect(),
            counts,
            predictions,
        }
    }

    /// Mean accuracy over the given classes, weighted by their counts.
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        let (h, n) = classes
            .iter()
            .fold((0.0, 0usize), |(h, n), &c| (h + self.per_class[c] * self.counts[c] as f64, n + self.counts[c]));
        h / n.max(1) as f64
    }
}

/// Top-1 accuracy overall and per class, with batch norm in inference mode.
pub fn evaluate<F: Real>(model: &mut Model<F>, data: &[SyntheticClip]) -> Result<Evaluation> {
    let k = model.spec.num_classes;
    let mut preds = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_BATCH) {
        let clips: Vec<&SyntheticClip> = chunk.iter().collect();
        let (x, _) = batch::<F>(&clips)?;
        let logits = model.forward(&x, Mode::Eval)?;
        for row in logits.data().chunks(k) {
            let r: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            preds.push(argmax(&r));
        }
    }
    let labels: Vec<usize> = data.iter().map(|c| c.label).collect();
    Ok(Evaluation::from_predictions(preds, &labels, k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateStat {
    pub site: usize,
    pub kind: CalibratorKind,
    pub class: usize,
    pub mean_logit: f64,
    pub count: usize,
}

/// Mean pre-sigmoid gate logit per `(site, calibrator, class)`.
pub fn gate_stats<F: Real>(model: &mut Model<F>, data: &[SyntheticClip]) -> Result<Vec<GateStat>> {
    let mut acc: BTreeMap<(usize, CalibratorKind, usize), (f64, usize)> = BTreeMap::new();
    for chunk in data.chunks(EVAL_BATCH) {
        let clips: Vec<&SyntheticClip> = chunk.iter().collect();
        let (x, labels) = batch::<F>(&clips)?;
        model.forward(&x, Mode::Eval)?;
        for g in model.gate_logits() {
            for (&v, &y) in g.per_sample.iter().zip(&labels) {
                let e = acc.entry((g.site, g.kind, y)).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|((site, kind, class), (sum, count))| GateStat {
            site,
            kind,
            class,
            mean_logit: sum / count as f64,
            count,
        })
        .collect())
}

pub fn gate_stats_csv(stats: &[GateStat]) -> String {
    let mut s = String::from("site,calibrator,class,mean_logit\n");
    for g in stats {
        let _ = writeln!(s, "{},{},{},{:.9}", g.site, g.kind, g.class, g.mean_logit);
    }
    s
}
