//! Softmax linear classifier over cached feature vectors, trained with
//! minibatch SGD (heavy-ball momentum, L2 weight decay, step learning-rate drops).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{DeduceError, Result};
use crate::fields::{self, num_array, Ctx};
use crate::types::{softmax, ClassSet, Detection, Posterior, Provenance, SceneLabel, NUM_OBJECTS};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    class_set: ClassSet,
    input_dim: usize,
    /// Row-major `|classes| x input_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl LinearHead {
    /// All-zero head.
    pub fn zeros(class_set: ClassSet, input_dim: usize) -> Self {
        let k = class_set.len();
        LinearHead {
            class_set,
            input_dim,
            weights: vec![0.0; k * input_dim],
            bias: vec![0.0; k],
            provenance: None,
        }
    }

    pub fn from_parts(class_set: ClassSet, input_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let k = class_set.len();
        if input_dim == 0 {
            return Err(DeduceError::Shape("head input dimension must be positive".into()));
        }
        if weights.len() != k * input_dim {
            return Err(DeduceError::DimensionMismatch {
                expected: k * input_dim,
                found: weights.len(),
            });
        }
        if bias.len() != k {
            return Err(DeduceError::DimensionMismatch {
                expected: k,
                found: bias.len(),
            });
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(DeduceError::NonFinite("head parameters".into()));
        }
        Ok(LinearHead {
            class_set,
            input_dim,
            weights,
            bias,
            provenance: None,
        })
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn num_classes(&self) -> usize {
        self.class_set.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn row(&self, class: SceneLabel) -> &[f64] {
        &self.weights[class.0 * self.input_dim..(class.0 + 1) * self.input_dim]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(DeduceError::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `weights · x + bias`.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.logits_unchecked(x))
    }

    fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Posterior> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DeduceError::NonFinite("head input".into()));
        }
        softmax(&self.logits(x)?)
    }

    pub fn predict(&self, x: &[f64]) -> Result<SceneLabel> {
        Ok(self.forward(x)?.argmax())
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|w| w * w).sum()
    }

    /// Writes the checkpoint text: one JSON header line, one line per weight
    /// row, then the bias line.
    pub fn to_checkpoint(&self) -> String {
        let mut header = json!({
            "type": "linear_head",
            "class_set": self.class_set.names(),
            "input_dim": self.input_dim,
        });
        if let Some(p) = &self.provenance {
            header["seed"] = p.seed.map_or(Value::Null, Value::from);
            header["config_hash"] = Value::from(p.config_hash.clone());
            header["tool"] = Value::from(p.tool.clone());
        }
        let mut out = header.to_string();
        out.push('\n');
        for row in self.weights.chunks_exact(self.input_dim) {
            out.push_str(&num_array(row).to_string());
            out.push('\n');
        }
        out.push_str(&num_array(&self.bias).to_string());
        out.push('\n');
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l));
        let (hline, htext) = lines
            .next()
            .ok_or_else(|| DeduceError::schema(1, "<header>", "empty checkpoint"))?;
        let hv: Value = serde_json::from_str(htext)
            .map_err(|e| DeduceError::schema(hline, "<header>", e.to_string()))?;
        let ctx = Ctx::new(hline, &hv, "<header>")?;
        ctx.deny_unknown(&["type", "class_set", "input_dim", "seed", "config_hash", "tool"])?;
        if ctx.str("type")? != "linear_head" {
            return Err(ctx.err("type", "expected `linear_head`"));
        }
        let class_set =
            ClassSet::new(ctx.string_array("class_set")?).map_err(|e| ctx.err("class_set", e.to_string()))?;
        let input_dim = ctx.usize("input_dim")?;
        if input_dim == 0 || input_dim > 1 << 24 {
            return Err(ctx.err("input_dim", "out of range"));
        }
        let provenance = match ctx.optional("config_hash") {
            None => None,
            Some(_) => Some(Provenance {
                tool: ctx.optional("tool").and_then(Value::as_str).unwrap_or("unknown").to_string(),
                seed: match ctx.optional("seed") {
                    None => None,
                    Some(_) => Some(ctx.u64("seed")?),
                },
                config_hash: ctx.str("config_hash")?.to_string(),
            }),
        };

        let k = class_set.len();
        let mut weights = Vec::new();
        for row in 0..k {
            let (line, text) = lines
                .next()
                .ok_or_else(|| DeduceError::schema(hline, "weights", format!("missing row {row}")))?;
            let values = parse_float_line(line, text, "weights")?;
            if values.len() != input_dim {
                return Err(DeduceError::schema(
                    line,
                    "weights",
                    format!("row {row} has {} values, expected {input_dim}", values.len()),
                ));
            }
            weights.extend(values);
        }
        let (bline, btext) = lines
            .next()
            .ok_or_else(|| DeduceError::schema(hline, "bias", "missing bias line"))?;
        let bias = parse_float_line(bline, btext, "bias")?;
        if let Some((line, _)) = lines.next() {
            return Err(DeduceError::schema(line, "<record>", "trailing content"));
        }
        let mut head = Self::from_parts(class_set, input_dim, weights, bias)
            .map_err(|e| DeduceError::schema(bline, "bias", e.to_string()))?;
        head.provenance = provenance;
        Ok(head)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint()).map_err(|e| DeduceError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DeduceError::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

fn parse_float_line(line: usize, text: &str, field: &str) -> Result<Vec<f64>> {
    let v: Value =
        serde_json::from_str(text).map_err(|e| DeduceError::schema(line, field, e.to_string()))?;
    fields::f64_array(&v, field, line)
}

/// A labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: SceneLabel,
}

/// Labeled feature vectors sharing one dimension and class set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    class_set: ClassSet,
    dim: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(class_set: ClassSet, samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(DeduceError::EmptyBatch)?;
        let dim = first.features.len();
        if dim == 0 {
            return Err(DeduceError::Shape("zero-length feature vectors".into()));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(DeduceError::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                });
            }
            if s.label.0 >= class_set.len() {
                return Err(DeduceError::InvalidConfig(format!("label {} outside class set", s.label)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DeduceError::NonFinite("training features".into()));
            }
        }
        Ok(Dataset {
            class_set,
            dim,
            samples,
        })
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_set.len()];
        for s in &self.samples {
            counts[s.label.0] += 1;
        }
        counts
    }
}

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy(predicted: &[Posterior], truth: &[SceneLabel]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(DeduceError::EmptyBatch);
    }
    if predicted.len() != truth.len() {
        return Err(DeduceError::DimensionMismatch {
            expected: predicted.len(),
            found: truth.len(),
        });
    }
    let total: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| -p.get(*t).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / predicted.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Row-major, same layout as [`LinearHead::weights`].
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `(p − y) xᵀ` averaged over the batch, and `p − y` for the bias.
pub fn analytic_gradient(head: &LinearHead, batch: &[Sample]) -> Result<Gradient> {
    if batch.is_empty() {
        return Err(DeduceError::EmptyBatch);
    }
    for s in batch {
        head.check_dim(&s.features)?;
        if s.label.0 >= head.num_classes() {
            return Err(DeduceError::InvalidConfig(format!("label {} outside class set", s.label)));
        }
    }
    let mut grad = Gradient {
        weights: vec![0.0; head.weights.len()],
        bias: vec![0.0; head.bias.len()],
    };
    accumulate(head, batch.iter().map(|s| (s.features.as_slice(), s.label)), &mut grad)?;
    Ok(grad)
}

/// Fills `grad` with the batch-mean gradient and returns the summed loss.
fn accumulate<'a>(
    head: &LinearHead,
    batch: impl ExactSizeIterator<Item = (&'a [f64], SceneLabel)>,
    grad: &mut Gradient,
) -> Result<f64> {
    let n = batch.len() as f64;
    let d = head.input_dim;
    grad.weights.fill(0.0);
    grad.bias.fill(0.0);
    let mut loss = 0.0;
    for (x, y) in batch {
        let p = softmax(&head.logits_unchecked(x))?;
        loss -= p.get(y).max(PROB_FLOOR).ln();
        for (k, pk) in p.values().iter().enumerate() {
            let delta = pk - if k == y.0 { 1.0 } else { 0.0 };
            grad.bias[k] += delta;
            for (g, xi) in grad.weights[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g += delta * xi;
            }
        }
    }
    for g in grad.weights.iter_mut().chain(grad.bias.iter_mut()) {
        *g /= n;
    }
    Ok(loss)
}

/// Concatenates a scene feature with an 80-way object presence indicator.
pub fn concat_features(scene_feature: &[f64], detections: &[Detection], min_conf: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene_feature.len() + NUM_OBJECTS);
    out.extend_from_slice(scene_feature);
    out.resize(scene_feature.len() + NUM_OBJECTS, 0.0);
    for d in detections.iter().filter(|d| d.confidence >= min_conf) {
        out[scene_feature.len() + d.object.id()] = 1.0;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 90,
            lr_drop_every: 30,
            lr_drop_factor: 10.0,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Scene-feature schedule: 90 epochs, lr ÷10 every 30.
    pub fn scene_schedule(seed: u64) -> Self {
        TrainConfig {
            seed,
            ..Self::default()
        }
    }

    /// Combined-feature schedule: 9 epochs, lr ÷10 every 3.
    pub fn combined_schedule(seed: u64) -> Self {
        TrainConfig {
            epochs: 9,
            lr_drop_every: 3,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DeduceError::InvalidConfig(m.into()));
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad("lr0 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.lr_drop_every == 0 {
            return bad("lr_drop_every must be >= 1");
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return bad("lr_drop_factor must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.lr_drop_every) as i32;
        self.lr0 / self.lr_drop_factor.powi(drops)
    }
}

/// Classical momentum SGD with weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    momentum: f64,
    weight_decay: f64,
    velocity_w: Vec<f64>,
    velocity_b: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(head: &LinearHead, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            velocity_w: vec![0.0; head.weights.len()],
            velocity_b: vec![0.0; head.bias.len()],
        }
    }

    /// `g ← g + λw; v ← μv − lr·g; w ← w + v` for weights and bias alike.
    pub fn step(&mut self, head: &mut LinearHead, grad: &Gradient, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        let update = |params: &mut [f64], vel: &mut [f64], g: &[f64]| {
            for ((p, v), g) in params.iter_mut().zip(vel.iter_mut()).zip(g) {
                let g = g + wd * *p;
                *v = mu * *v - lr * g;
                *p += *v;
            }
        };
        update(&mut head.weights, &mut self.velocity_w, &grad.weights);
        update(&mut head.bias, &mut self.velocity_b, &grad.bias);
    }
}

/// Statistics for one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 0-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean of minibatch losses seen during the epoch.
    pub loss: f64,
    /// Top-1 accuracy on the training set after the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// Validation accuracies, or training accuracies when no validation split was given.
    pub fn accuracy_curve(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .map(|e| e.val_accuracy.unwrap_or(e.train_accuracy))
            .collect()
    }

    /// Number of epochs completed when the accuracy curve first reached `acc`.
    pub fn epochs_to_reach(&self, acc: f64) -> Option<usize> {
        self.accuracy_curve().iter().position(|a| *a >= acc).map(|i| i + 1)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.accuracy_curve().last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,train_accuracy,val_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch + 1,
                e.lr,
                e.loss,
                e.train_accuracy,
                e.val_accuracy.map_or(String::new(), |v| v.to_string())
            ));
        }
        out
    }
}

/// Seeded uniform initialization in `[−1/√D, 1/√D]`, zero bias.
pub fn init_head(class_set: ClassSet, input_dim: usize, rng: &mut impl Rng) -> LinearHead {
    let bound = 1.0 / (input_dim as f64).sqrt();
    let mut head = LinearHead::zeros(class_set, input_dim);
    for w in head.weights.iter_mut() {
        *w = rng.random_range(-bound..=bound);
    }
    head
}

/// Top-1 accuracy of `head` on `data`.
pub fn accuracy(head: &LinearHead, data: &Dataset) -> f64 {
    let correct = data
        .samples
        .iter()
        .filter(|s| crate::types::argmax(&head.logits_unchecked(&s.features)) == s.label.0)
        .count();
    correct as f64 / data.len() as f64
}

pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(LinearHead, TrainReport)> {
    train_with_validation(data, cfg, None)
}

/// Trains a head from a seeded initialization. Fully deterministic given `cfg.seed`.
pub fn train_with_validation(
    data: &Dataset,
    cfg: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<(LinearHead, TrainReport)> {
    cfg.validate()?;
    for (label, count) in data.class_set.labels().zip(data.class_counts()) {
        if count == 0 {
            return Err(DeduceError::EmptyClass(data.class_set.name(label).to_string()));
        }
    }
    if let Some(v) = validation {
        if v.dim != data.dim {
            return Err(DeduceError::DimensionMismatch {
                expected: data.dim,
                found: v.dim,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = init_head(data.class_set.clone(), data.dim, &mut rng);
    let mut opt = SgdMomentum::new(&head, cfg.momentum, cfg.weight_decay);
    let mut grad = Gradient {
        weights: vec![0.0; head.weights.len()],
        bias: vec![0.0; head.bias.len()],
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items = batch
                .iter()
                .map(|&i| (data.samples[i].features.as_slice(), data.samples[i].label));
            let loss = accumulate(&head, items, &mut grad)
                .map_err(|_| DeduceError::NonFiniteLoss { epoch, batch: bi })?;
            if !loss.is_finite() {
                return Err(DeduceError::NonFiniteLoss { epoch, batch: bi });
            }
            loss_sum += loss;
            opt.step(&mut head, &grad, lr);
            if head.weights.iter().chain(&head.bias).any(|w| !w.is_finite()) {
                return Err(DeduceError::NonFiniteLoss { epoch, batch: bi });
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            train_accuracy: accuracy(&head, data),
            val_accuracy: validation.map(|v| accuracy(&head, v)),
        });
    }
    Ok((head, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ObjectClass;

    fn two_class() -> ClassSet {
        ClassSet::new(["a", "b"]).unwrap()
    }

    #[test]
    fn cross_entropy_unit_values() {
        let uniform = Posterior::uniform(7);
        let ce = cross_entropy(&[uniform], &[SceneLabel(3)]).unwrap();
        assert!((ce - 7f64.ln()).abs() < 1e-12);

        let hot: Vec<_> = (0..3).map(|i| Posterior::one_hot(3, SceneLabel(i))).collect();
        let ce = cross_entropy(&hot, &[SceneLabel(0), SceneLabel(1), SceneLabel(2)]).unwrap();
        assert!(ce.abs() <= 1e-10);

        let p = Posterior::new(vec![0.5, 0.25, 0.25]).unwrap();
        let ce = cross_entropy(&[p], &[SceneLabel(1)]).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);

        assert!(matches!(cross_entropy(&[], &[]), Err(DeduceError::EmptyBatch)));
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = LinearHead::zeros(ClassSet::home7(), 5);
        let p = head.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(p, Posterior::uniform(7));
        assert!(head.forward(&[1.0]).is_err());
    }

    #[test]
    fn identity_weights_concentrate_on_matching_class() {
        let k = 4;
        let mut w = vec![0.0; k * k];
        for i in 0..k {
            w[i * k + i] = 1.0;
        }
        let head = LinearHead::from_parts(ClassSet::new(["a", "b", "c", "d"]).unwrap(), k, w, vec![0.0; k]).unwrap();
        let p = head.forward(&[0.0, 0.0, 50.0, 0.0]).unwrap();
        assert_eq!(p.argmax(), SceneLabel(2));
        assert!(p.get(SceneLabel(2)) > 1.0 - 1e-12);
    }

    #[test]
    fn gradient_at_uniform_point_is_half_x() {
        let head = LinearHead::zeros(two_class(), 3);
        let x = vec![1.0, -2.0, 4.0];
        let g = analytic_gradient(&head, &[Sample { features: x.clone(), label: SceneLabel(0) }]).unwrap();
        for i in 0..3 {
            assert!((g.weights[i] + 0.5 * x[i]).abs() < 1e-15);
            assert!((g.weights[3 + i] - 0.5 * x[i]).abs() < 1e-15);
        }
        assert_eq!(g.bias, vec![-0.5, 0.5]);
    }

    #[test]
    fn gradient_vanishes_at_perfect_prediction() {
        let head = LinearHead::from_parts(two_class(), 1, vec![100.0, -100.0], vec![0.0, 0.0]).unwrap();
        let g = analytic_gradient(&head, &[Sample { features: vec![1.0], label: SceneLabel(0) }]).unwrap();
        assert!(g.weights.iter().chain(&g.bias).all(|v| v.abs() < 1e-80));
    }

    #[test]
    fn concat_sets_object_indicators() {
        let feat = vec![0.5, -1.0];
        let out = concat_features(&feat, &[], 0.5);
        assert_eq!(out.len(), 82);
        assert!(out[2..].iter().all(|v| *v == 0.0));

        let bed = Detection::full_frame("bed", 0.9).unwrap();
        let bed2 = Detection::full_frame("bed", 0.8).unwrap();
        let out = concat_features(&feat, &[bed, bed2], 0.5);
        assert_eq!(out[2..].iter().filter(|v| **v == 1.0).count(), 1);

        let tv = Detection::full_frame("tv", 0.9).unwrap();
        let laptop = Detection::full_frame("laptop", 0.7).unwrap();
        let out = concat_features(&feat, &[tv, laptop], 0.5);
        let ones: Vec<usize> = out[2..].iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![62, 63]);
        assert_eq!(ObjectClass::new(63).unwrap().name(), "laptop");
    }

    #[test]
    fn lr_schedule_drops_every_three_epochs() {
        let cfg = TrainConfig::combined_schedule(0);
        let lrs: Vec<f64> = (0..9).map(|e| cfg.lr_at(e)).collect();
        let expect = [0.1, 0.1, 0.1, 0.01, 0.01, 0.01, 0.001, 0.001, 0.001];
        for (a, b) in lrs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{lrs:?}");
        }
        let scene = TrainConfig::scene_schedule(0);
        assert_eq!((scene.epochs, scene.lr_drop_every), (90, 30));
        assert!((scene.lr_at(89) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { momentum: 1.0, ..base.clone() },
            TrainConfig { epochs: 0, ..base.clone() },
            TrainConfig { lr_drop_every: 0, ..base.clone() },
            TrainConfig { weight_decay: -1.0, ..base.clone() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn empty_class_is_an_error() {
        let data = Dataset::new(
            two_class(),
            vec![Sample { features: vec![1.0], label: SceneLabel(0) }],
        )
        .unwrap();
        assert!(matches!(train(&data, &TrainConfig::default()), Err(DeduceError::EmptyClass(c)) if c == "b"));
    }

    #[test]
    fn diverging_training_reports_the_batch() {
        let samples = (0..8)
            .map(|i| Sample {
                features: vec![1e200],
                label: SceneLabel(i % 2),
            })
            .collect();
        let data = Dataset::new(two_class(), samples).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        assert!(matches!(train(&data, &cfg), Err(DeduceError::NonFiniteLoss { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut head = init_head(ClassSet::office5(), 6, &mut rng);
        head.bias_mut()[2] = -0.125;
        head.provenance = Some(Provenance::new(Some(5), "cafe"));
        let back = LinearHead::from_checkpoint(&head.to_checkpoint()).unwrap();
        assert_eq!(back, head);
        let truncated: String = head.to_checkpoint().lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(LinearHead::from_checkpoint(&truncated).is_err());
    }
}
