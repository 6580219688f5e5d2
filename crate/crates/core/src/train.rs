//! Optimizers, learning-rate schedules and the epoch loop.

use serde::{Deserialize, Serialize};

use crate::data::{permutation, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::nn::{derive_seed, softmax, softmax_cross_entropy, Gradients, Model};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    #[serde(rename = "SGD")]
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum, weight_decay: 0.0 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => *lr = new_lr,
        }
        self
    }

    fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::domain(format!("learning rate {lr} must be finite and >= 0")));
        }
        match *self {
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps.is_nan() || eps <= 0.0 {
                    return Err(Error::domain("Adam needs betas in [0, 1) and eps > 0"));
                }
            }
            OptimizerConfig::Sgd { momentum, weight_decay, .. } => {
                if !(0.0..1.0).contains(&momentum) || !(weight_decay >= 0.0 && weight_decay.is_finite()) {
                    return Err(Error::domain("SGD needs momentum in [0, 1) and weight_decay >= 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Schedule {
    #[default]
    None,
    Exponential { gamma: f64 },
    MultiStep { milestones: Vec<usize>, factor: f64 },
}

impl Schedule {
    /// Learning rate used during 0-based `epoch`.
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        match self {
            Schedule::None => base,
            Schedule::Exponential { gamma } => exponential_lr(base, *gamma, epoch),
            Schedule::MultiStep { milestones, factor } => multistep_lr(base, milestones, *factor, epoch),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Schedule::None => Ok(()),
            Schedule::Exponential { gamma } if *gamma > 0.0 && *gamma <= 1.0 => Ok(()),
            Schedule::Exponential { gamma } => Err(Error::domain(format!("gamma {gamma} must be in (0, 1]"))),
            Schedule::MultiStep { factor, .. } if *factor > 0.0 && factor.is_finite() => Ok(()),
            Schedule::MultiStep { factor, .. } => Err(Error::domain(format!("factor {factor} must be positive"))),
        }
    }
}

pub fn exponential_lr(base: f64, gamma: f64, epoch: usize) -> f64 {
    base * gamma.powi(epoch as i32)
}

/// `base * factor^k` where `k` counts milestones `<= epoch`.
pub fn multistep_lr(base: f64, milestones: &[usize], factor: f64, epoch: usize) -> f64 {
    let k = milestones.iter().filter(|&&m| m <= epoch).count();
    base * factor.powi(k as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: Schedule,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Adam at 0.001 with exponential decay 0.9, batch 64, 10 epochs.
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::adam(0.001),
            schedule: Schedule::Exponential { gamma: 0.9 },
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule.lr(self.optimizer.lr(), epoch)
    }
}

/// One Adam update on a flat parameter slice; `t` is the 1-based step.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f32],
    grads: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i] as f64;
        let mi = beta1 * m[i] as f64 + (1.0 - beta1) * g;
        let vi = beta2 * v[i] as f64 + (1.0 - beta2) * g * g;
        m[i] = mi as f32;
        v[i] = vi as f32;
        let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        params[i] = (params[i] as f64 - update) as f32;
    }
}

/// SGD with momentum and L2 weight decay: `v = μv + g + λp; p -= lr·v`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], velocity: &mut [f32], lr: f64, momentum: f64, weight_decay: f64) {
    for i in 0..params.len() {
        let g = grads[i] as f64 + weight_decay * params[i] as f64;
        let vi = momentum * velocity[i] as f64 + g;
        velocity[i] = vi as f32;
        params[i] = (params[i] as f64 - lr * vi) as f32;
    }
}

/// Optimizer state: step count and one or two moment buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step: u64,
    /// Adam first moments, or SGD velocities.
    pub first: Vec<Tensor>,
    /// Adam second moments; empty for SGD.
    pub second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        let zeros = || -> Result<Vec<Tensor>> { model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect() };
        let second = match config {
            OptimizerConfig::Adam { .. } => zeros()?,
            OptimizerConfig::Sgd { .. } => Vec::new(),
        };
        Ok(Optimizer { config, step: 0, first: zeros()?, second })
    }

    pub fn apply(&mut self, model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
        let mut params = model.parameters_mut();
        if params.len() != grads.0.len() || params.len() != self.first.len() {
            return Err(Error::contract("gradients do not match the model parameters"));
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(&grads.0).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
            match self.config {
                OptimizerConfig::Adam { beta1, beta2, eps, .. } => adam_step(
                    p.data_mut(),
                    g.data(),
                    self.first[i].data_mut(),
                    self.second[i].data_mut(),
                    self.step,
                    lr,
                    beta1,
                    beta2,
                    eps,
                ),
                OptimizerConfig::Sgd { momentum, weight_decay, .. } => {
                    sgd_step(p.data_mut(), g.data(), self.first[i].data_mut(), lr, momentum, weight_decay)
                }
            }
        }
        Ok(())
    }
}

/// Training order for 0-based `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    permutation(n, derive_seed(seed, epoch as u64, 0x5_4f_46))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Completed epochs, 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
}

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut s = String::from("epoch,lr,train_loss,test_acc\n");
    for r in rows {
        let acc = r.test_acc.map(|a| a.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, acc));
    }
    s
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub optimizer: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer.clone(), &model)?;
        Ok(Trainer { model, config, optimizer, epoch: 0 })
    }

    /// Runs one epoch over `data` and returns the sample-weighted mean loss.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        check_input(&self.model, data)?;
        let lr = self.config.lr_at(self.epoch);
        let order = epoch_order(data.len(), self.config.seed, self.epoch);
        let mut total = 0.0;
        for idx in order.chunks(self.config.batch_size) {
            let (x, y) = data.batch(idx)?;
            let (logits, tape) = self.model.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            let grads = self.model.backward(&tape, &grad)?;
            self.optimizer.apply(&mut self.model, &grads, lr)?;
            total += loss as f64 * idx.len() as f64;
        }
        self.epoch += 1;
        Ok(EpochLog { epoch: self.epoch, lr, train_loss: total / data.len() as f64, test_acc: None })
    }

    /// Trains for the remaining configured epochs, evaluating on `test` after
    /// each one when given. `on_epoch` sees every log row as it is produced.
    pub fn fit(&mut self, train: &Dataset, test: Option<&Dataset>, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let mut row = self.train_epoch(train)?;
            if let Some(t) = test {
                row.test_acc = Some(evaluate(&self.model, t)?.accuracy);
            }
            on_epoch(&row);
            logs.push(row);
        }
        Ok(logs)
    }
}

fn check_input(model: &Model, data: &Dataset) -> Result<()> {
    if data.sample_shape() != model.input_shape.as_slice() {
        return Err(Error::shape(format!(
            "dataset samples {:?} do not fit model input {:?}",
            data.sample_shape(),
            model.input_shape
        )));
    }
    if data.num_classes > model.num_classes {
        return Err(Error::shape(format!(
            "dataset has {} classes, model {}",
            data.num_classes, model.num_classes
        )));
    }
    Ok(())
}

const EVAL_BATCH: usize = 500;

/// Softmax probabilities `[N, classes]` for every sample, in order.
pub fn predict_proba(model: &Model, data: &Dataset) -> Result<Tensor> {
    check_input(model, data)?;
    let c = model.num_classes;
    let mut probs = Vec::with_capacity(data.len() * c);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_BATCH) {
        let (x, _) = data.batch(idx)?;
        let logits = model.predict(&x)?;
        for row in logits.data().chunks(c) {
            probs.extend(softmax(row));
        }
    }
    Tensor::from_vec(&[data.len(), c], probs)
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<MetricsReport> {
    let probs = predict_proba(model, data)?;
    MetricsReport::from_scores(&probs, &data.labels)
}

/// Mean cross-entropy over `data`.
pub fn evaluate_loss(model: &Model, data: &Dataset) -> Result<f64> {
    check_input(model, data)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for idx in all.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(idx)?;
        let (loss, _) = softmax_cross_entropy(&model.predict(&x)?, &y)?;
        total += loss as f64 * idx.len() as f64;
    }
    Ok(total / data.len() as f64)
}
