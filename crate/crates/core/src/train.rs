//! Adam, the step learning-rate schedule, the epoch loop and evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::derive_seed;
use crate::data::FeatureDataset;
use crate::error::{QtlError, Result};
use crate::model::{argmax, cross_entropy, HybridModel, ModelVariant};

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;
const BATCH_SALT: u64 = 0x4241_5443_4800_0001;
const EVAL_SALT: u64 = 0x4556_414c_0000_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(QtlError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(QtlError::Config(format!("{name}={b} outside [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(QtlError::Config(
                "epsilon must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub step_size: usize,
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            step_size: 3,
            gamma: 0.9,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size == 0 {
            return Err(QtlError::Config("scheduler step size must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(QtlError::Config(format!(
                "scheduler gamma {} outside (0, 1]",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Zero skips training and only evaluates the initial model.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: OptimConfig,
    pub sched: SchedulerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            seed: 0,
            optim: OptimConfig::default(),
            sched: SchedulerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(QtlError::Config("batch size must be at least 1".into()));
        }
        self.optim.validate()?;
        self.sched.validate()
    }
}

/// `base_lr * gamma^floor(epoch / step_size)`.
pub fn scheduled_lr(sched: &SchedulerConfig, base_lr: f64, epoch: usize) -> f64 {
    let exponent = (epoch / sched.step_size.max(1)) as i32;
    base_lr * sched.gamma.powi(exponent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Weight decay, when set, is
/// added to the gradient as an L2 term.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64, cfg: &OptimConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(QtlError::Dimension(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(QtlError::NonFinite(format!("gradient entry {i} = {}", grads[i])));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Seeded shuffle, then the first `round(fraction * len)` samples train.
pub fn split(dataset: &FeatureDataset, fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    if dataset.is_empty() {
        return Err(QtlError::Empty("dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(QtlError::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((dataset.len() as f64) * fraction).round() as usize;
    if cut == 0 || cut == dataset.len() {
        return Err(QtlError::Config(format!(
            "split fraction {fraction} of {} samples leaves one side empty",
            dataset.len()
        )));
    }
    let (a, b) = order.split_at(cut);
    Ok((dataset.subset(a), dataset.subset(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub mean_loss: f64,
    pub samples: usize,
}

impl Metrics {
    pub fn from_predictions(class_count: usize, labels: &[usize], predicted: &[usize], mean_loss: f64) -> Self {
        let mut confusion = vec![vec![0u64; class_count]; class_count];
        for (&y, &p) in labels.iter().zip(predicted) {
            confusion[y][p] += 1;
        }
        let correct: u64 = (0..class_count).map(|c| confusion[c][c]).sum();
        let samples = labels.len();
        Self {
            accuracy: if samples == 0 {
                0.0
            } else {
                correct as f64 / samples as f64
            },
            confusion,
            mean_loss,
            samples,
        }
    }
}

/// Argmax predictions, accuracy, confusion matrix and mean loss. Sampled
/// heads draw shots from `seed`.
pub fn evaluate(model: &HybridModel, set: &FeatureDataset, seed: u64) -> Result<Metrics> {
    if set.is_empty() {
        return Err(QtlError::Empty("evaluation set"));
    }
    if set.feature_dim != model.feature_dim() {
        return Err(QtlError::Dimension(format!(
            "dataset has {} features, model expects {}",
            set.feature_dim,
            model.feature_dim()
        )));
    }
    let outputs: Vec<Result<(usize, f64)>> = set
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, (f, y))| {
            let logits = model.forward(f, derive_seed(seed, i as u64))?;
            let (loss, _) = cross_entropy(&logits, *y)?;
            Ok((argmax(&logits), loss))
        })
        .collect();
    let mut predicted = Vec::with_capacity(set.len());
    let mut total = 0.0;
    for o in outputs {
        let (p, l) = o?;
        predicted.push(p);
        total += l;
    }
    let classes = model.variant().class_count.max(set.class_count);
    Ok(Metrics::from_predictions(
        classes,
        &set.labels,
        &predicted,
        total / set.len() as f64,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Persisted record of one training run. `wall_time_s` is the only field
/// that differs between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: ModelVariant,
    pub train_config: TrainConfig,
    /// Free-form echo of the driving configuration, if any.
    pub config: Option<serde_json::Value>,
    pub seed: u64,
    pub feature_dim: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub quantum_trainables: usize,
    pub classical_trainables: usize,
    pub history: Vec<EpochLog>,
    pub train_metrics: Metrics,
    pub val_metrics: Option<Metrics>,
    pub test_metrics: Option<Metrics>,
    pub model_checksum: String,
    pub wall_time_s: f64,
}

impl RunReport {
    /// JSON value with `wall_time_s` zeroed, for run-to-run comparison.
    pub fn masked(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["wall_time_s"] = serde_json::json!(0.0);
        v
    }
}

/// Runs `cfg.epochs` passes of shuffled mini-batch Adam over `train_set`,
/// logging mean train loss and validation accuracy after each epoch.
pub fn train(
    model: &mut HybridModel,
    train_set: &FeatureDataset,
    val_set: Option<&FeatureDataset>,
    cfg: &TrainConfig,
) -> Result<RunReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(QtlError::Empty("training set"));
    }
    if train_set.feature_dim != model.feature_dim() {
        return Err(QtlError::Dimension(format!(
            "training set has {} features, model expects {}",
            train_set.feature_dim,
            model.feature_dim()
        )));
    }
    if let Some(label) = train_set.labels.iter().find(|&&l| l >= model.variant().class_count) {
        return Err(QtlError::Config(format!(
            "label {label} exceeds model class count {}",
            model.variant().class_count
        )));
    }
    let start = Instant::now();
    let samples = train_set.samples();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut adam = AdamState::new(model.param_count());
    let mut params = model.flat_params();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = scheduled_lr(&cfg.sched, cfg.optim.lr, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&[f64], usize)> = chunk.iter().map(|&i| samples[i]).collect();
            let batch_seed = derive_seed(cfg.seed ^ BATCH_SALT, step);
            let (loss, grad) = model.batch_gradient(&batch, batch_seed, step)?;
            if !loss.is_finite() {
                return Err(QtlError::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            adam_step(&mut adam, &mut params, &grad, lr, &cfg.optim)
                .map_err(|e| QtlError::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            model.set_flat_params(&params)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.seed ^ EVAL_SALT)?.accuracy),
            _ => None,
        };
        history.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / samples.len() as f64,
            val_accuracy,
        });
    }

    let train_metrics = evaluate(model, train_set, cfg.seed ^ EVAL_SALT)?;
    let val_metrics = match val_set {
        Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.seed ^ EVAL_SALT)?),
        _ => None,
    };
    Ok(RunReport {
        variant: *model.variant(),
        train_config: *cfg,
        config: None,
        seed: cfg.seed,
        feature_dim: model.feature_dim(),
        train_samples: train_set.len(),
        val_samples: val_set.map_or(0, FeatureDataset::len),
        quantum_trainables: model.quantum_trainable_count(),
        classical_trainables: model.classical_trainable_count(),
        history,
        train_metrics,
        val_metrics,
        test_metrics: None,
        model_checksum: model.checksum(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Evaluation seed used by [`train`] for its own metrics.
pub fn eval_seed(run_seed: u64) -> u64 {
    run_seed ^ EVAL_SALT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::model::VariantKind;
    use crate::noise::DeviceCalibration;

    #[test]
    fn schedule_examples() {
        let s = SchedulerConfig::default();
        for e in 0..3 {
            assert_eq!(scheduled_lr(&s, 1e-3, e), 1e-3);
        }
        assert!((scheduled_lr(&s, 1e-3, 3) - 9e-4).abs() < 1e-18);
        assert!((scheduled_lr(&s, 1e-3, 9) - 7.29e-4).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = OptimConfig::default();
        for g in [3.0, -0.02, 1e3] {
            let mut st = AdamState::new(1);
            let mut p = [1.0];
            adam_step(&mut st, &mut p, &[g], 1e-3, &cfg).unwrap();
            assert!(((1.0 - p[0]).abs() - 1e-3).abs() < 1e-8);
        }
        let mut st = AdamState::new(2);
        let mut p = [1.0, -2.0];
        adam_step(&mut st, &mut p, &[0.0, 0.0], 1e-3, &cfg).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert!(adam_step(&mut st, &mut p, &[f64::NAN, 0.0], 1e-3, &cfg).is_err());
        assert!(adam_step(&mut st, &mut p, &[0.0], 1e-3, &cfg).is_err());
    }

    #[test]
    fn adam_reaches_origin_on_parabola() {
        let cfg = OptimConfig::default();
        let mut st = AdamState::new(1);
        let mut p = [5.0f64];
        let mut steps = 0;
        while p[0].abs() >= 0.5 {
            let g = 2.0 * p[0];
            adam_step(&mut st, &mut p, &[g], 1e-2, &cfg).unwrap();
            steps += 1;
            assert!(steps <= 2000);
        }
    }

    #[test]
    fn split_sizes_and_coverage() {
        let ds = generate_synthetic(2, 5, 1.0, 0).unwrap();
        let (a, b) = split(&ds, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<Vec<f64>> = a.features.iter().chain(&b.features).cloned().collect();
        let mut orig = ds.features.clone();
        let key = |v: &Vec<f64>| v[0].to_bits();
        all.sort_by_key(key);
        orig.sort_by_key(key);
        assert_eq!(all, orig);
        assert_eq!(split(&ds, 0.8, 3).unwrap(), (a, b));
        assert!(split(&FeatureDataset::new(2, 2, ""), 0.8, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds.subset(&[0, 1]), 0.9, 0).is_err());
    }

    #[test]
    fn metrics_identities() {
        let m = Metrics::from_predictions(2, &[0, 1, 1, 0], &[0, 1, 1, 0], 0.0);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.confusion, vec![vec![2, 0], vec![0, 2]]);
        let m = Metrics::from_predictions(2, &[0, 1, 1, 0], &[0; 4], 0.0);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.confusion[1], vec![2, 0]);
    }

    fn toy() -> FeatureDataset {
        generate_synthetic(16, 40, 6.0, 42).unwrap()
    }

    #[test]
    fn zero_epochs_evaluates_only() {
        let ds = toy();
        let v = ModelVariant::standard(VariantKind::Classical, 2, &DeviceCalibration::heron_r2()).unwrap();
        let mut model = HybridModel::new(v, 16, 1).unwrap();
        let before = model.flat_params();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let r = train(&mut model, &ds, None, &cfg).unwrap();
        assert!(r.history.is_empty());
        assert_eq!(model.flat_params(), before);
        assert_eq!(r.train_metrics.samples, 80);
    }

    #[test]
    fn classical_head_fits_toy_set() {
        let ds = toy();
        let v = ModelVariant::standard(VariantKind::Classical, 2, &DeviceCalibration::heron_r2()).unwrap();
        let mut model = HybridModel::new(v, 16, 1).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.optim.lr = 1e-2;
        let r = train(&mut model, &ds, None, &cfg).unwrap();
        assert_eq!(r.train_metrics.accuracy, 1.0);
        let first = r.history[0].train_loss;
        let last = r.history.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = toy();
        let v = ModelVariant::standard(VariantKind::RingExact, 2, &DeviceCalibration::heron_r2()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = HybridModel::new(v, 16, 9).unwrap();
            train(&mut m, &ds, Some(&ds), &cfg).unwrap().masked()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn partial_batch_is_kept() {
        let ds = generate_synthetic(3, 5, 6.0, 0).unwrap();
        let v = ModelVariant::standard(VariantKind::Classical, 2, &DeviceCalibration::heron_r2()).unwrap();
        let mut model = HybridModel::new(v, 3, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let r = train(&mut model, &ds, None, &cfg).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.history[0].train_loss.is_finite());
    }
}
