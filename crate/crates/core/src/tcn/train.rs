use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, LossConfig, TcnConfig, TcnModel};
use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::global_search::Fitness;
use crate::metrics::{self, Metric, MetricsReport, DEFAULT_THRESHOLDS};
use crate::search_space::DilationStructure;
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Optimizer {
    /// `v = mu v + g; p -= lr v`.
    #[default]
    Sgd,
    /// Adam with `beta1 = momentum`, `beta2 = 0.999`, `eps = 1e-8`.
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::config(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// SGD momentum, or Adam's first-moment decay.
    pub momentum: f64,
    /// Sequences per update; gradients are averaged over the batch.
    pub batch_size: usize,
    pub smoothing_weight: f64,
    pub smoothing_clamp: f64,
    /// Learning rate of the branch weights, relative to `learning_rate`.
    pub branch_lr_scale: f64,
    /// Rescale each batch gradient to at most this global L2 norm; 0 disables.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            // With plain SGD two epochs on a small dataset barely move the
            // model, and short-run fitness stops ranking structures the way
            // full training does. Adam gets far enough for the ranking to hold.
            optimizer: Optimizer::Adam,
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 1,
            smoothing_weight: 0.15,
            smoothing_clamp: 16.0,
            branch_lr_scale: 1.0,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::config("train.epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.learning_rate must be > 0 and momentum in [0, 1)"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.smoothing_weight >= 0.0) || !(self.smoothing_clamp > 0.0) {
            return Err(Error::config("train smoothing weight must be >= 0 and clamp > 0"));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::config("train.grad_clip must be >= 0"));
        }
        if !(self.branch_lr_scale >= 0.0) {
            return Err(Error::config("train.branch_lr_scale must be >= 0"));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            smoothing_weight: self.smoothing_weight,
            smoothing_clamp: self.smoothing_clamp,
        }
    }
}

/// Momentum SGD over the sequences in seeded random order. Returns the mean
/// per-sequence loss of every epoch.
pub fn train(model: &mut TcnModel, data: &[FrameSequence], tcfg: &TrainingConfig) -> Result<Vec<f64>> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let loss_cfg = tcfg.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut state = OptimizerState::new(model);
    let mut curve = Vec::with_capacity(tcfg.epochs);

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad = Gradients::zeros_like(model);
            for &i in batch {
                let (loss, g) = model.loss_and_grad(&data[i], &loss_cfg)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, loss });
                }
                epoch_loss += loss;
                grad.add(&g);
            }
            grad.scale(1.0 / batch.len() as f64);
            if tcfg.grad_clip > 0.0 {
                let norm = grad.norm();
                if norm > tcfg.grad_clip {
                    grad.scale(tcfg.grad_clip / norm);
                }
            }
            state.step(model, &grad, tcfg);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || model.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        curve.push(mean);
    }
    Ok(curve)
}

struct OptimizerState {
    first: Gradients,
    second: Gradients,
    steps: i32,
}

impl OptimizerState {
    fn new(model: &TcnModel) -> Self {
        Self {
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
            steps: 0,
        }
    }

    fn step(&mut self, model: &mut TcnModel, grad: &Gradients, tcfg: &TrainingConfig) {
        self.steps += 1;
        let (lr, mu) = (tcfg.learning_rate, tcfg.momentum);
        let branch_lr = lr * tcfg.branch_lr_scale;
        let update: Box<dyn Fn(&mut f64, &mut f64, &mut f64, f64, f64)> = match tcfg.optimizer {
            Optimizer::Sgd => Box::new(move |p, v, _, g, lr| {
                *v = mu * *v + g;
                *p -= lr * *v;
            }),
            Optimizer::Adam => {
                const BETA2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let c1 = 1.0 - mu.powi(self.steps);
                let c2 = 1.0 - BETA2.powi(self.steps);
                Box::new(move |p, m, s, g, lr| {
                    *m = mu * *m + (1.0 - mu) * g;
                    *s = BETA2 * *s + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*s / c2).sqrt() + EPS);
                })
            }
        };
        for (((p, m), s), g) in model
            .params
            .iter_mut()
            .zip(&mut self.first.params)
            .zip(&mut self.second.params)
            .zip(&grad.params)
        {
            update(p, m, s, *g, lr);
        }
        if let Some(weights) = model.branch_weights_mut() {
            let layers = weights
                .iter_mut()
                .zip(&mut self.first.branch_weights)
                .zip(&mut self.second.branch_weights)
                .zip(&grad.branch_weights);
            for (((w, m), s), g) in layers {
                for (((wi, mi), si), gi) in w.iter_mut().zip(m.iter_mut()).zip(s.iter_mut()).zip(g) {
                    update(wi, mi, si, *gi, branch_lr);
                }
            }
        }
    }
}

/// Builds a model for `structure`, trains it on `train` and reports metrics
/// on `validation`.
pub fn train_and_report(
    structure: &DilationStructure,
    train_set: &[FrameSequence],
    validation: &[FrameSequence],
    template: &TcnConfig,
    tcfg: &TrainingConfig,
    thresholds: &[f64],
    seed: u64,
) -> Result<(TcnModel, MetricsReport)> {
    if validation.is_empty() {
        return Err(Error::config("validation set is empty"));
    }
    let mut cfg = template.clone();
    cfg.structure = structure.clone();
    let mut model = TcnModel::new(cfg, seed::derive_str(seed, "init"))?;
    let mut tcfg = tcfg.clone();
    tcfg.seed = seed::derive_str(seed, "order");
    train(&mut model, train_set, &tcfg)?;
    let report = validation_report(&model, validation, thresholds)?;
    Ok((model, report))
}

pub fn validation_report(
    model: &TcnModel,
    validation: &[FrameSequence],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    let pairs = validation
        .iter()
        .map(|s| Ok((model.predict(&s.features)?, s.labels.clone())))
        .collect::<Result<Vec<_>>>()?;
    metrics::report(&pairs, thresholds)
}

/// `E(C)`: validation metric of `structure` after `epochs` epochs of training.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_structure(
    structure: &DilationStructure,
    train_set: &[FrameSequence],
    validation: &[FrameSequence],
    epochs: usize,
    metric: Metric,
    template: &TcnConfig,
    tcfg: &TrainingConfig,
    seed: u64,
) -> Result<f64> {
    let mut tcfg = tcfg.clone();
    tcfg.epochs = epochs;
    let thresholds = match metric {
        Metric::F1(tau) => vec![tau],
        _ => DEFAULT_THRESHOLDS.to_vec(),
    };
    let (_, report) = train_and_report(structure, train_set, validation, template, &tcfg, &thresholds, seed)?;
    report
        .metric(metric)
        .ok_or_else(|| Error::config(format!("metric {metric} is not reported")))
}

/// [`evaluate_structure`] bound to one train/validation split.
#[derive(Debug, Clone)]
pub struct StructureEvaluator<'a> {
    pub train: &'a [FrameSequence],
    pub validation: &'a [FrameSequence],
    pub model: TcnConfig,
    pub training: TrainingConfig,
    pub metric: Metric,
    /// Independently seeded trainings averaged per evaluation. Short training
    /// runs are noisy; averaging a few keeps lucky draws from dominating the
    /// population.
    pub repeats: usize,
}

impl Fitness for StructureEvaluator<'_> {
    fn evaluate(&self, structure: &DilationStructure, epochs: usize, seed: u64) -> Result<f64> {
        let run = |seed| {
            evaluate_structure(
                structure,
                self.train,
                self.validation,
                epochs,
                self.metric,
                &self.model,
                &self.training,
                seed,
            )
        };
        if self.repeats <= 1 {
            return run(seed);
        }
        let mut total = 0.0;
        for r in 0..self.repeats {
            total += run(seed::derive(seed, r as u64))?;
        }
        Ok(total / self.repeats as f64)
    }
}
