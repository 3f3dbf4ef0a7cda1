//! Expectation-guided iterative local refinement of dilation rates.
//!
//! Every layer's rate `D` is replaced by a window of `S` evenly spaced
//! candidate rates in `[D - dD, D + dD]`. The layer then runs one shared
//! kernel at all candidate rates and mixes the branch outputs with a
//! probability mass function over learned, unbounded branch weights. After a
//! few epochs of training the layer collapses to the floored expectation of
//! the candidate rates under that PMF, the window is re-centred, and the
//! process repeats.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::search_space::DilationStructure;
use crate::seed;
use crate::tcn::conv::{mixed_conv_backward, mixed_conv_forward, ConvParams, FeatureMap};
use crate::tcn::{train, TcnConfig, TcnModel, TrainingConfig};

/// Candidate rates around one layer's current rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalWindow {
    center: u64,
    half_width: f64,
    raw: Vec<f64>,
    dilations: Vec<u64>,
}

impl LocalWindow {
    /// `d_i = D - dD + (i - 1) * 2 dD / (S - 1)` for `i = 1..=S`, `dD = fraction * D`.
    /// Materialized rates are rounded half-to-even and clamped to `>= 1`.
    pub fn new(center: u64, fraction: f64, samples: usize) -> Result<Self> {
        if center < 1 {
            return Err(Error::config("window center must be >= 1"));
        }
        if samples < 2 {
            return Err(Error::config(format!("window needs >= 2 samples, got {samples}")));
        }
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config(format!("window fraction {fraction} outside (0, 1)")));
        }
        let c = center as f64;
        let half_width = fraction * c;
        let step = 2.0 * half_width / (samples - 1) as f64;
        let raw: Vec<f64> = (0..samples).map(|i| c - half_width + i as f64 * step).collect();
        let dilations = raw.iter().map(|&d| materialize(d)).collect();
        Ok(Self {
            center,
            half_width,
            raw,
            dilations,
        })
    }

    pub fn center(&self) -> u64 {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Real-valued candidate rates, before rounding.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// Integer rates used by the convolution branches.
    pub fn dilations(&self) -> &[u64] {
        &self.dilations
    }

    pub fn samples(&self) -> usize {
        self.raw.len()
    }
}

fn materialize(d: f64) -> u64 {
    d.round_ties_even().max(1.0) as u64
}

pub fn build_local_window(center: u64, fraction: f64, samples: usize) -> Result<LocalWindow> {
    LocalWindow::new(center, fraction, samples)
}

/// How branch weights become a probability mass function.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PmfKind {
    /// `|w_i| / sum_j |w_j|`.
    #[default]
    AbsNormalize,
    /// `sigmoid(w_i) / sum_j sigmoid(w_j)`.
    SigmoidNormalize,
    Softmax,
}

impl PmfKind {
    pub fn apply(self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.is_empty() {
            return Err(Error::shape("no branch weights"));
        }
        match self {
            PmfKind::AbsNormalize => {
                let z: f64 = weights.iter().map(|w| w.abs()).sum();
                if z == 0.0 {
                    return Err(Error::DegenerateWeights);
                }
                Ok(weights.iter().map(|w| w.abs() / z).collect())
            }
            PmfKind::SigmoidNormalize => {
                let s: Vec<f64> = weights.iter().map(|&w| sigmoid(w)).collect();
                let z: f64 = s.iter().sum();
                Ok(s.iter().map(|v| v / z).collect())
            }
            PmfKind::Softmax => {
                let m = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = weights.iter().map(|w| (w - m).exp()).collect();
                let z: f64 = e.iter().sum();
                Ok(e.iter().map(|v| v / z).collect())
            }
        }
    }

    /// PMF, falling back to uniform when the weights are degenerate.
    pub fn apply_or_uniform(self, weights: &[f64]) -> Vec<f64> {
        self.apply(weights)
            .unwrap_or_else(|_| vec![1.0 / weights.len() as f64; weights.len()])
    }

    /// Vector-Jacobian product: maps `dL/dalpha` to `dL/dw`.
    ///
    /// For all three kinds `dL/dw_k = s'_k / Z * (g_k - <g, alpha>)` with the
    /// per-kind unnormalized score `s`. The subgradient of `|w|` at 0 is 0.
    pub fn backward(self, weights: &[f64], grad_alpha: &[f64]) -> Vec<f64> {
        let alpha = self.apply_or_uniform(weights);
        let mean: f64 = grad_alpha.iter().zip(&alpha).map(|(g, a)| g * a).sum();
        match self {
            PmfKind::AbsNormalize => {
                let z: f64 = weights.iter().map(|w| w.abs()).sum();
                if z == 0.0 {
                    return vec![0.0; weights.len()];
                }
                weights
                    .iter()
                    .zip(grad_alpha)
                    .map(|(&w, &g)| sign(w) / z * (g - mean))
                    .collect()
            }
            PmfKind::SigmoidNormalize => {
                let z: f64 = weights.iter().map(|&w| sigmoid(w)).sum();
                weights
                    .iter()
                    .zip(grad_alpha)
                    .map(|(&w, &g)| {
                        let s = sigmoid(w);
                        s * (1.0 - s) / z * (g - mean)
                    })
                    .collect()
            }
            PmfKind::Softmax => alpha
                .iter()
                .zip(grad_alpha)
                .map(|(&a, &g)| a * (g - mean))
                .collect(),
        }
    }
}

impl FromStr for PmfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" | "abs-normalize" => Ok(PmfKind::AbsNormalize),
            "sigmoid" | "sigmoid-normalize" => Ok(PmfKind::SigmoidNormalize),
            "softmax" => Ok(PmfKind::Softmax),
            _ => Err(Error::config(format!("unknown pmf kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for PmfKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PmfKind::AbsNormalize => "abs",
            PmfKind::SigmoidNormalize => "sigmoid",
            PmfKind::Softmax => "softmax",
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `alpha_i = |w_i| / sum_j |w_j|`.
pub fn pmf_from_weights(weights: &[f64]) -> Result<Vec<f64>> {
    PmfKind::AbsNormalize.apply(weights)
}

/// Slack for rounding noise when flooring an expectation that is integral in
/// exact arithmetic (e.g. `0.6*90 + 0.3*100 + 0.1*110`).
const FLOOR_SLACK: f64 = 1e-9;

/// `floor(sum_i alpha_i * d_i)` over the raw candidate rates, clamped to `>= 1`.
pub fn expected_dilation(window: &LocalWindow, alpha: &[f64]) -> Result<u64> {
    if alpha.len() != window.samples() {
        return Err(Error::shape(format!(
            "PMF has {} entries, window has {} rates",
            alpha.len(),
            window.samples()
        )));
    }
    let e: f64 = window.raw().iter().zip(alpha).map(|(d, a)| d * a).sum();
    Ok(((e + FLOOR_SLACK * e.abs().max(1.0)).floor()).max(1.0) as u64)
}

/// Shared-kernel layer evaluating one convolution at every window rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDilatedLayer {
    /// `out x in x width`, shared by all branches.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub width: usize,
    /// One unbounded importance weight per branch.
    pub weights: Vec<f64>,
    pub window: LocalWindow,
    pub pmf: PmfKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDilatedGrads {
    pub input: FeatureMap,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MultiDilatedLayer {
    /// Branch weights start uniform at `1/S`.
    pub fn new(
        kernel: Vec<f64>,
        bias: Vec<f64>,
        out_channels: usize,
        in_channels: usize,
        width: usize,
        window: LocalWindow,
    ) -> Result<Self> {
        if kernel.len() != out_channels * in_channels * width || bias.len() != out_channels {
            return Err(Error::shape("kernel or bias size does not match channels"));
        }
        let s = window.samples();
        Ok(Self {
            kernel,
            bias,
            out_channels,
            in_channels,
            width,
            weights: vec![1.0 / s as f64; s],
            window,
            pmf: PmfKind::AbsNormalize,
        })
    }

    fn params(&self) -> ConvParams<'_> {
        ConvParams {
            kernel: &self.kernel,
            bias: &self.bias,
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            width: self.width,
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.pmf.apply_or_uniform(&self.weights)
    }

    /// `y = b + sum_i alpha_i * conv(x, kernel, d_i)`.
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        mixed_conv_forward(x, &self.params(), self.window.dilations(), &self.alpha())
    }

    pub fn backward(&self, grad_out: &FeatureMap, x: &FeatureMap) -> Result<MultiDilatedGrads> {
        let g = mixed_conv_backward(
            grad_out,
            x,
            &self.params(),
            self.window.dilations(),
            &self.alpha(),
        )?;
        Ok(MultiDilatedGrads {
            input: g.input,
            kernel: g.kernel,
            bias: g.bias,
            weights: self.pmf.backward(&self.weights, &g.coefs),
        })
    }

    /// Collapsed rate for this layer.
    pub fn expected_dilation(&self) -> Result<u64> {
        expected_dilation(&self.window, &self.alpha())
    }
}

pub fn multi_dilated_forward(x: &FeatureMap, layer: &MultiDilatedLayer) -> Result<FeatureMap> {
    layer.forward(x)
}

pub fn multi_dilated_backward(
    grad_out: &FeatureMap,
    x: &FeatureMap,
    layer: &MultiDilatedLayer,
) -> Result<MultiDilatedGrads> {
    layer.backward(grad_out, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchConfig {
    /// Outer iterations `N`.
    pub iterations: usize,
    /// `dD = fraction * D`.
    pub window_fraction: f64,
    /// Candidate rates per layer `S`.
    pub samples: usize,
    pub epochs_per_update: usize,
    pub pmf: PmfKind,
    pub seed: u64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            window_fraction: 0.1,
            samples: 3,
            epochs_per_update: 3,
            pmf: PmfKind::AbsNormalize,
            seed: 0,
        }
    }
}

impl LocalSearchConfig {
    pub fn total_epochs(&self) -> usize {
        self.iterations * self.epochs_per_update
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_fraction > 0.0 && self.window_fraction < 1.0) {
            return Err(Error::config("local.window_fraction must lie in (0, 1)"));
        }
        if self.samples < 2 {
            return Err(Error::config("local.samples must be >= 2"));
        }
        if self.epochs_per_update < 1 {
            return Err(Error::config("local.epochs_per_update must be >= 1"));
        }
        Ok(())
    }
}

/// Model, data and optimizer settings the local search trains with.
#[derive(Debug, Clone)]
pub struct LocalTrainer<'a> {
    pub data: &'a [FrameSequence],
    pub model: TcnConfig,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchState {
    pub iteration: usize,
    pub structure: DilationStructure,
    pub params: Vec<f64>,
    /// Structure after each iteration, starting with the initial one.
    pub trajectory: Vec<DilationStructure>,
}

#[derive(Debug, Clone)]
pub struct LocalSearchOutcome {
    pub structure: DilationStructure,
    pub trajectory: Vec<DilationStructure>,
    pub model: TcnModel,
}

/// Runs the refinement loop from `initial`. `on_update` sees the state after
/// every structure update (for checkpointing).
pub fn run_local_search_with(
    initial: &DilationStructure,
    cfg: &LocalSearchConfig,
    trainer: &LocalTrainer<'_>,
    resume: Option<LocalSearchState>,
    on_update: &mut dyn FnMut(&LocalSearchState) -> Result<()>,
) -> Result<LocalSearchOutcome> {
    cfg.validate()?;
    let mut model_cfg = trainer.model.clone();
    model_cfg.structure = initial.clone();
    let mut model = TcnModel::new(model_cfg, seed::derive_str(cfg.seed, "local-init"))?;
    let mut state = match resume {
        Some(state) => {
            model.set_structure(&state.structure)?;
            if state.params.len() != model.num_parameters() {
                return Err(Error::Checkpoint("parameter count does not match model".into()));
            }
            model.params_mut().copy_from_slice(&state.params);
            state
        }
        None => LocalSearchState {
            iteration: 0,
            structure: initial.clone(),
            params: model.params().to_vec(),
            trajectory: vec![initial.clone()],
        },
    };

    while state.iteration < cfg.iterations {
        let iteration = state.iteration + 1;
        let windows = state
            .structure
            .flat()
            .into_iter()
            .map(|d| LocalWindow::new(d, cfg.window_fraction, cfg.samples))
            .collect::<Result<Vec<_>>>()?;
        model.enter_search(&windows, cfg.pmf)?;

        let mut tcfg = trainer.training.clone();
        tcfg.epochs = cfg.epochs_per_update;
        tcfg.seed = seed::derive(cfg.seed, iteration as u64);
        train(&mut model, trainer.data, &tcfg).map_err(|e| match e {
            Error::Divergence { epoch, loss } => Error::Divergence {
                epoch: (iteration - 1) * cfg.epochs_per_update + epoch,
                loss,
            },
            other => other,
        })?;

        let pmfs = model.branch_pmfs();
        let next = windows
            .iter()
            .zip(&pmfs)
            .map(|(w, a)| expected_dilation(w, a))
            .collect::<Result<Vec<_>>>()?;
        let structure = state.structure.with_flat(&next)?;
        model.set_structure(&structure)?;

        state.iteration = iteration;
        state.structure = structure.clone();
        state.params = model.params().to_vec();
        state.trajectory.push(structure);
        on_update(&state)?;
    }

    Ok(LocalSearchOutcome {
        structure: state.structure,
        trajectory: state.trajectory,
        model,
    })
}

pub fn run_local_search(
    initial: &DilationStructure,
    cfg: &LocalSearchConfig,
    trainer: &LocalTrainer<'_>,
) -> Result<LocalSearchOutcome> {
    run_local_search_with(initial, cfg, trainer, None, &mut |_| Ok(()))
}

pub const TRAJECTORY_HEADER: &str = "iteration,layer_index,dilation";

/// One row per (iteration, layer), iteration 0 being the initial structure.
pub fn trajectory_csv(trajectory: &[DilationStructure]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (it, s) in trajectory.iter().enumerate() {
        for (layer, d) in s.flat().into_iter().enumerate() {
            let _ = writeln!(out, "{it},{layer},{d}");
        }
    }
    out
}
