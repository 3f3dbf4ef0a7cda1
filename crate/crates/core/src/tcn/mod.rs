//! Simplified multi-stage temporal convolutional network with a hand-written
//! backward pass.
//!
//! Each stage is a 1x1 input projection, a stack of residual blocks
//! (dilated conv, ReLU, 1x1 conv, residual add) and a 1x1 classifier. Stage
//! `s > 0` reads the per-frame softmax of stage `s - 1`. All parameters live
//! in one flat `f64` vector.
//!
//! In search mode every dilated conv becomes a shared-kernel multi-dilated
//! layer over a window of rates, with one branch weight per rate. Branch
//! weights are kept outside the flat parameter vector so the parameter count
//! only depends on [`TcnConfig`].

pub mod checkpoint;
pub mod conv;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FrameSequence;
use crate::error::{Error, Result};
use crate::local_search::{LocalWindow, PmfKind};
use crate::search_space::DilationStructure;
use conv::{mixed_conv_backward, mixed_conv_forward, ConvParams, FeatureMap};

pub use train::{
    evaluate_structure, train, train_and_report, validation_report, Optimizer, StructureEvaluator,
    TrainingConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub kernel_width: usize,
    pub structure: DilationStructure,
}

impl TcnConfig {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, structure: DilationStructure) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            kernel_width: 3,
            structure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 || self.hidden < 1 || self.classes < 1 {
            return Err(Error::config("tcn input_dim, hidden and classes must be >= 1"));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::config("tcn.kernel_width must be odd"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn num_parameters(&self) -> usize {
        let (h, k, w) = (self.hidden, self.classes, self.kernel_width);
        let block = h * h * w + h + h * h + h;
        self.structure
            .stages()
            .iter()
            .enumerate()
            .map(|(s, layers)| {
                let input = if s == 0 { self.input_dim } else { k };
                input * h + h + layers.len() * block + h * k + k
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    weight: usize,
    bias: usize,
    out: usize,
    input: usize,
    width: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.bias + self.out
    }

    fn params<'a>(&self, p: &'a [f64]) -> ConvParams<'a> {
        ConvParams {
            kernel: &p[self.weight..self.bias],
            bias: &p[self.bias..self.end()],
            out_channels: self.out,
            in_channels: self.input,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    conv: Dense,
    pointwise: Dense,
}

#[derive(Debug, Clone, PartialEq)]
struct StageLayout {
    input: Dense,
    blocks: Vec<BlockLayout>,
    output: Dense,
}

fn layout(cfg: &TcnConfig) -> Vec<StageLayout> {
    let mut offset = 0;
    let mut dense = |out: usize, input: usize, width: usize| {
        let d = Dense {
            weight: offset,
            bias: offset + out * input * width,
            out,
            input,
            width,
        };
        offset = d.end();
        d
    };
    let (h, k) = (cfg.hidden, cfg.classes);
    cfg.structure
        .stages()
        .iter()
        .enumerate()
        .map(|(s, layers)| {
            let input = dense(h, if s == 0 { cfg.input_dim } else { k }, 1);
            let blocks = layers
                .iter()
                .map(|_| BlockLayout {
                    conv: dense(h, h, cfg.kernel_width),
                    pointwise: dense(h, h, 1),
                })
                .collect();
            let output = dense(k, h, 1);
            StageLayout {
                input,
                blocks,
                output,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
struct SearchMode {
    windows: Vec<LocalWindow>,
    pmf: PmfKind,
    /// `S` weights per layer, layers in flat order.
    weights: Vec<Vec<f64>>,
}

/// Cross-entropy plus truncated temporal smoothing, per stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub smoothing_weight: f64,
    /// Upper bound on each squared log-probability difference.
    pub smoothing_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            smoothing_weight: 0.15,
            smoothing_clamp: 16.0,
        }
    }
}

/// Gradients of the loss with respect to the flat parameters and, in search
/// mode, the branch weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub branch_weights: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &TcnModel) -> Self {
        Self {
            params: vec![0.0; model.params.len()],
            branch_weights: model
                .search
                .as_ref()
                .map(|s| s.weights.iter().map(|w| vec![0.0; w.len()]).collect())
                .unwrap_or_default(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.params.iter_mut().chain(self.branch_weights.iter_mut().flatten()) {
            *v *= c;
        }
    }

    /// Global L2 norm over parameters and branch weights.
    pub fn norm(&self) -> f64 {
        self.params
            .iter()
            .chain(self.branch_weights.iter().flatten())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        for (a, b) in self.branch_weights.iter_mut().zip(&other.branch_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

struct BlockCache {
    input: FeatureMap,
    pre_activation: FeatureMap,
    activation: FeatureMap,
}

struct StageCache {
    input: FeatureMap,
    blocks: Vec<BlockCache>,
    hidden: FeatureMap,
    logits: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    cfg: TcnConfig,
    layout: Vec<StageLayout>,
    params: Vec<f64>,
    search: Option<SearchMode>,
}

impl TcnModel {
    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// fan-in `n` is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new(cfg: TcnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layout = layout(&cfg);
        let mut params = vec![0.0; cfg.num_parameters()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |d: &Dense| {
            let bound = 1.0 / ((d.input * d.width) as f64).sqrt();
            for v in &mut params[d.weight..d.end()] {
                *v = rng.random_range(-bound..=bound);
            }
        };
        for stage in &layout {
            init(&stage.input);
            for b in &stage.blocks {
                init(&b.conv);
                init(&b.pointwise);
            }
            init(&stage.output);
        }
        Ok(Self {
            cfg,
            layout,
            params,
            search: None,
        })
    }

    pub fn config(&self) -> &TcnConfig {
        &self.cfg
    }

    pub fn structure(&self) -> &DilationStructure {
        &self.cfg.structure
    }

    pub fn num_stages(&self) -> usize {
        self.layout.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat parameter range owned by stage `s`.
    pub fn stage_param_range(&self, s: usize) -> std::ops::Range<usize> {
        let st = &self.layout[s];
        st.input.weight..st.output.end()
    }

    /// Replaces the dilation rates (same shape) and leaves search mode.
    pub fn set_structure(&mut self, structure: &DilationStructure) -> Result<()> {
        if !structure.same_shape(&self.cfg.structure) {
            return Err(Error::shape(format!(
                "structure shape {:?} differs from model shape {:?}",
                structure.shape(),
                self.cfg.structure.shape()
            )));
        }
        self.cfg.structure = structure.clone();
        self.search = None;
        Ok(())
    }

    /// Switches every dilated conv to a multi-dilated layer over `windows`
    /// (one per layer, flat order) with uniform branch weights.
    pub fn enter_search(&mut self, windows: &[LocalWindow], pmf: PmfKind) -> Result<()> {
        if windows.len() != self.cfg.structure.num_layers() {
            return Err(Error::shape(format!(
                "{} windows for {} layers",
                windows.len(),
                self.cfg.structure.num_layers()
            )));
        }
        self.search = Some(SearchMode {
            windows: windows.to_vec(),
            pmf,
            weights: windows
                .iter()
                .map(|w| vec![1.0 / w.samples() as f64; w.samples()])
                .collect(),
        });
        Ok(())
    }

    pub fn leave_search(&mut self) {
        self.search = None;
    }

    pub fn in_search(&self) -> bool {
        self.search.is_some()
    }

    pub fn branch_weights(&self) -> Option<&[Vec<f64>]> {
        self.search.as_ref().map(|s| s.weights.as_slice())
    }

    pub fn branch_weights_mut(&mut self) -> Option<&mut [Vec<f64>]> {
        self.search.as_mut().map(|s| s.weights.as_mut_slice())
    }

    /// Per-layer branch PMFs; empty outside search mode.
    pub fn branch_pmfs(&self) -> Vec<Vec<f64>> {
        match &self.search {
            Some(s) => s.weights.iter().map(|w| s.pmf.apply_or_uniform(w)).collect(),
            None => Vec::new(),
        }
    }

    /// Dilations and branch coefficients of flat layer `layer`.
    fn branches(&self, layer: usize, dilation: u64) -> (Vec<u64>, Vec<f64>) {
        match &self.search {
            Some(s) => (
                s.windows[layer].dilations().to_vec(),
                s.pmf.apply_or_uniform(&s.weights[layer]),
            ),
            None => (vec![dilation], vec![1.0]),
        }
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.channels() != self.cfg.input_dim {
            return Err(Error::shape(format!(
                "model expects {} feature channels, got {}",
                self.cfg.input_dim,
                x.channels()
            )));
        }
        if x.is_empty() {
            return Err(Error::shape("empty input sequence"));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &FeatureMap) -> Result<Vec<StageCache>> {
        self.check_input(x)?;
        let p = &self.params;
        let mut caches: Vec<StageCache> = Vec::with_capacity(self.layout.len());
        let mut layer = 0;
        for (s, stage) in self.layout.iter().enumerate() {
            let input = match caches.last() {
                None => x.clone(),
                Some(prev) => softmax_frames(&prev.logits),
            };
            let mut h = mixed_conv_forward(&input, &stage.input.params(p), &[1], &[1.0])?;
            let mut blocks = Vec::with_capacity(stage.blocks.len());
            for (b, &d) in stage.blocks.iter().zip(&self.cfg.structure.stages()[s]) {
                let (dilations, coefs) = self.branches(layer, d);
                let pre = mixed_conv_forward(&h, &b.conv.params(p), &dilations, &coefs)?;
                let mut act = pre.clone();
                act.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                let z = mixed_conv_forward(&act, &b.pointwise.params(p), &[1], &[1.0])?;
                let mut next = h.clone();
                next.add_assign(&z);
                blocks.push(BlockCache {
                    input: h,
                    pre_activation: pre,
                    activation: act,
                });
                h = next;
                layer += 1;
            }
            let logits = mixed_conv_forward(&h, &stage.output.params(p), &[1], &[1.0])?;
            caches.push(StageCache {
                input,
                blocks,
                hidden: h,
                logits,
            });
        }
        Ok(caches)
    }

    /// Per-stage class scores, each `K x T`.
    pub fn forward(&self, x: &FeatureMap) -> Result<Vec<FeatureMap>> {
        Ok(self.forward_cached(x)?.into_iter().map(|c| c.logits).collect())
    }

    /// Argmax of the last stage per frame.
    pub fn predict(&self, x: &FeatureMap) -> Result<Vec<usize>> {
        let logits = self.forward(x)?.pop().expect("at least one stage");
        Ok(argmax_frames(&logits))
    }

    pub fn loss(&self, seq: &FrameSequence, loss: &LossConfig) -> Result<f64> {
        let caches = self.forward_cached(&seq.features)?;
        let mut total = 0.0;
        for c in &caches {
            total += stage_loss(&c.logits, &seq.labels, loss)?.0;
        }
        Ok(total)
    }

    /// Loss of one sequence summed over stages, with its gradients.
    pub fn loss_and_grad(&self, seq: &FrameSequence, loss: &LossConfig) -> Result<(f64, Gradients)> {
        self.backward(seq, loss).map(|(l, g, _)| (l, g))
    }

    /// Gradient of the loss with respect to the input features.
    pub fn input_gradient(&self, seq: &FrameSequence, loss: &LossConfig) -> Result<FeatureMap> {
        self.backward(seq, loss).map(|(_, _, g)| g)
    }

    fn backward(&self, seq: &FrameSequence, loss: &LossConfig) -> Result<(f64, Gradients, FeatureMap)> {
        let caches = self.forward_cached(&seq.features)?;
        let p = &self.params;
        let mut grads = Gradients::zeros_like(self);
        let mut total = 0.0;
        let mut layer = self.cfg.structure.num_layers();
        // gradient flowing into the current stage's logits from the next stage
        let mut carried: Option<FeatureMap> = None;

        for (s, (stage, cache)) in self.layout.iter().zip(&caches).enumerate().rev() {
            let (value, mut g_logits) = stage_loss(&cache.logits, &seq.labels, loss)?;
            total += value;
            if let Some(g) = carried.take() {
                g_logits.add_assign(&g);
            }

            let g = mixed_conv_backward(&g_logits, &cache.hidden, &stage.output.params(p), &[1], &[1.0])?;
            accumulate(&mut grads.params, &stage.output, &g.kernel, &g.bias);
            let mut g_h = g.input;

            let dilations = &self.cfg.structure.stages()[s];
            for (b, (bc, &d)) in stage.blocks.iter().zip(cache.blocks.iter().zip(dilations)).rev() {
                layer -= 1;
                let g = mixed_conv_backward(&g_h, &bc.activation, &b.pointwise.params(p), &[1], &[1.0])?;
                accumulate(&mut grads.params, &b.pointwise, &g.kernel, &g.bias);
                let mut g_pre = g.input;
                for (gv, &a) in g_pre.data_mut().iter_mut().zip(bc.pre_activation.data()) {
                    if a <= 0.0 {
                        *gv = 0.0;
                    }
                }
                let (branch_d, coefs) = self.branches(layer, d);
                let g = mixed_conv_backward(&g_pre, &bc.input, &b.conv.params(p), &branch_d, &coefs)?;
                accumulate(&mut grads.params, &b.conv, &g.kernel, &g.bias);
                if let Some(search) = &self.search {
                    grads.branch_weights[layer] = search.pmf.backward(&search.weights[layer], &g.coefs);
                }
                g_h.add_assign(&g.input);
            }

            let g = mixed_conv_backward(&g_h, &cache.input, &stage.input.params(p), &[1], &[1.0])?;
            accumulate(&mut grads.params, &stage.input, &g.kernel, &g.bias);
            if s > 0 {
                let probs = &cache.input;
                carried = Some(softmax_backward(probs, &g.input));
            } else {
                return Ok((total, grads, g.input));
            }
        }
        unreachable!("a model has at least one stage")
    }
}

fn accumulate(dst: &mut [f64], d: &Dense, kernel: &[f64], bias: &[f64]) {
    for (a, b) in dst[d.weight..d.bias].iter_mut().zip(kernel) {
        *a += b;
    }
    for (a, b) in dst[d.bias..d.end()].iter_mut().zip(bias) {
        *a += b;
    }
}

/// Per-frame softmax over channels.
pub fn softmax_frames(logits: &FeatureMap) -> FeatureMap {
    let (k, t) = (logits.channels(), logits.len());
    let mut out = FeatureMap::zeros(k, t);
    for j in 0..t {
        let m = (0..k).map(|c| logits.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (logits.get(c, j) - m).exp()).sum();
        for c in 0..k {
            out.set(c, j, (logits.get(c, j) - m).exp() / z);
        }
    }
    out
}

/// Per-frame log-softmax over channels.
pub fn log_softmax_frames(logits: &FeatureMap) -> FeatureMap {
    let (k, t) = (logits.channels(), logits.len());
    let mut out = FeatureMap::zeros(k, t);
    for j in 0..t {
        let m = (0..k).map(|c| logits.get(c, j)).fold(f64::NEG_INFINITY, f64::max);
        let lz = m + (0..k).map(|c| (logits.get(c, j) - m).exp()).sum::<f64>().ln();
        for c in 0..k {
            out.set(c, j, logits.get(c, j) - lz);
        }
    }
    out
}

/// Maps a gradient with respect to softmax output `p` to the logits.
fn softmax_backward(p: &FeatureMap, g: &FeatureMap) -> FeatureMap {
    let (k, t) = (p.channels(), p.len());
    let mut out = FeatureMap::zeros(k, t);
    for j in 0..t {
        let dot: f64 = (0..k).map(|c| p.get(c, j) * g.get(c, j)).sum();
        for c in 0..k {
            out.set(c, j, p.get(c, j) * (g.get(c, j) - dot));
        }
    }
    out
}

pub fn argmax_frames(scores: &FeatureMap) -> Vec<usize> {
    (0..scores.len())
        .map(|j| {
            let mut best = 0;
            for c in 1..scores.channels() {
                if scores.get(c, j) > scores.get(best, j) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Mean frame cross-entropy plus `weight * mean(min((dlogp)^2, clamp))`,
/// where `dlogp` is the change of log-probabilities between consecutive
/// frames with the earlier frame treated as a constant.
fn stage_loss(logits: &FeatureMap, labels: &[usize], cfg: &LossConfig) -> Result<(f64, FeatureMap)> {
    let (k, t) = (logits.channels(), logits.len());
    if labels.len() != t {
        return Err(Error::shape(format!("{t} frames but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::shape(format!("label {bad} outside {k} classes")));
    }
    let logp = log_softmax_frames(logits);
    let mut g_logp = FeatureMap::zeros(k, t);
    let mut ce = 0.0;
    for (j, &y) in labels.iter().enumerate() {
        ce -= logp.get(y, j);
        g_logp.set(y, j, -1.0 / t as f64);
    }
    let mut loss = ce / t as f64;

    if cfg.smoothing_weight > 0.0 && t > 1 {
        let n = (k * (t - 1)) as f64;
        let mut smooth = 0.0;
        for c in 0..k {
            let row = logp.row(c);
            for j in 1..t {
                let diff = row[j] - row[j - 1];
                let sq = diff * diff;
                if sq < cfg.smoothing_clamp {
                    smooth += sq;
                    let gv = g_logp.get(c, j) + cfg.smoothing_weight * 2.0 * diff / n;
                    g_logp.set(c, j, gv);
                } else {
                    smooth += cfg.smoothing_clamp;
                }
            }
        }
        loss += cfg.smoothing_weight * smooth / n;
    }

    // back through log-softmax: g_z = g - softmax * sum(g)
    let mut g = FeatureMap::zeros(k, t);
    for j in 0..t {
        let sum: f64 = (0..k).map(|c| g_logp.get(c, j)).sum();
        for c in 0..k {
            g.set(c, j, g_logp.get(c, j) - logp.get(c, j).exp() * sum);
        }
    }
    Ok((loss, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn structure(stages: &[&[u64]]) -> DilationStructure {
        DilationStructure::new(stages.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    #[test]
    fn parameter_count_closed_form() {
        // input 8*4+4, two blocks of (4*4*3+4) + (4*4+4), classifier 4*3+3
        let cfg = TcnConfig::new(8, 4, 3, structure(&[&[1, 2]]));
        assert_eq!(cfg.num_parameters(), 36 + 2 * (52 + 20) + 15);
        let model = TcnModel::new(cfg, 0).unwrap();
        assert_eq!(model.num_parameters(), 195);
        assert_eq!(model.stage_param_range(0), 0..195);
    }

    #[test]
    fn later_stages_read_class_probabilities() {
        let cfg = TcnConfig::new(8, 4, 3, structure(&[&[1], &[2]]));
        // second stage input projection is 3 -> 4
        assert_eq!(cfg.num_parameters(), (36 + 72 + 15) + (16 + 72 + 15));
        let model = TcnModel::new(cfg, 0).unwrap();
        assert_eq!(model.num_stages(), 2);
        assert_eq!(model.stage_param_range(1), 123..226);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = TcnConfig::new(3, 4, 2, structure(&[&[1, 2], &[4]]));
        let a = TcnModel::new(cfg.clone(), 9).unwrap();
        let b = TcnModel::new(cfg.clone(), 9).unwrap();
        let c = TcnModel::new(cfg, 10).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn forward_preserves_length() {
        let model = TcnModel::new(TcnConfig::new(3, 4, 5, structure(&[&[1, 8], &[2]])), 1).unwrap();
        for t in [1, 2, 17] {
            let x = FeatureMap::from_vec(3, t, (0..3 * t).map(|j| (j as f64).cos()).collect()).unwrap();
            let out = model.forward(&x).unwrap();
            assert_eq!(out.len(), 2);
            for o in out {
                assert_eq!((o.channels(), o.len()), (5, t));
                assert!(o.data().iter().all(|v| v.is_finite()));
            }
        }
        assert!(model.forward(&FeatureMap::zeros(2, 4)).is_err());
        assert!(model.forward(&FeatureMap::zeros(3, 0)).is_err());
    }

    #[test]
    fn zero_input_propagates_biases() {
        // F=1, H=1, K=2, one block. With a zero input every frame sees
        // h0 = b_in, pre = b_c + w_c[center] * b_in (T=1: side taps pad),
        // h1 = h0 + w_p * relu(pre) + b_p, logits = w_o * h1 + b_o.
        let cfg = TcnConfig::new(1, 1, 2, structure(&[&[1]]));
        let mut model = TcnModel::new(cfg, 0).unwrap();
        // layout: w_in, b_in, w_c[3], b_c, w_p, b_p, w_o[2], b_o[2]
        let p = [0.0, 0.5, 9.0, 2.0, 9.0, -0.25, 3.0, 0.1, 1.5, -1.0, 0.2, 0.3];
        model.params_mut().copy_from_slice(&p);
        let h0 = 0.5;
        let pre = -0.25 + 2.0 * h0;
        let h1 = h0 + 3.0 * f64::max(pre, 0.0) + 0.1;
        let expected = [1.5 * h1 + 0.2, -h1 + 0.3];
        let out = model.forward(&FeatureMap::zeros(1, 1)).unwrap().remove(0);
        assert!((out.get(0, 0) - expected[0]).abs() < 1e-15);
        assert!((out.get(1, 0) - expected[1]).abs() < 1e-15);

        // with only the classifier bias set, every frame is that bias
        let mut p2 = [0.0; 12];
        p2[10] = 0.7;
        p2[11] = -0.4;
        model.params_mut().copy_from_slice(&p2);
        let out = model.forward(&FeatureMap::zeros(1, 6)).unwrap().remove(0);
        assert!(out.row(0).iter().all(|&v| v == 0.7));
        assert!(out.row(1).iter().all(|&v| v == -0.4));
    }

    #[test]
    fn stages_compose_through_softmax() {
        let two = TcnModel::new(TcnConfig::new(3, 4, 3, structure(&[&[1, 2], &[4]])), 5).unwrap();
        let mut first = TcnModel::new(TcnConfig::new(3, 4, 3, structure(&[&[1, 2]])), 0).unwrap();
        let mut second = TcnModel::new(TcnConfig::new(3, 4, 3, structure(&[&[4]])), 0).unwrap();
        first.params_mut().copy_from_slice(&two.params()[two.stage_param_range(0)]);
        second.params_mut().copy_from_slice(&two.params()[two.stage_param_range(1)]);

        let x = FeatureMap::from_vec(3, 11, (0..33).map(|j| (j as f64 * 0.3).sin()).collect()).unwrap();
        let out = two.forward(&x).unwrap();
        let a = first.forward(&x).unwrap().remove(0);
        let b = second.forward(&softmax_frames(&a)).unwrap().remove(0);
        assert_eq!(out[0], a);
        assert_eq!(out[1], b);
    }

    #[test]
    fn smoothing_clamp_caps_penalty() {
        let logits = FeatureMap::from_vec(2, 2, vec![40.0, -40.0, -40.0, 40.0]).unwrap();
        let cfg = LossConfig {
            smoothing_weight: 1.0,
            smoothing_clamp: 16.0,
        };
        let (loss, _) = stage_loss(&logits, &[0, 1], &cfg).unwrap();
        // cross-entropy is ~0; both classes jump by 80 nats, so both terms clamp
        assert!((loss - 16.0).abs() < 1e-9, "{loss}");
    }

    // Straight-line loss where frame t-1 of the smoothing term is read from
    // a frozen copy, which is what the stop-gradient means.
    fn frozen_loss(z: &[f64], frozen: &[f64], k: usize, t: usize, labels: &[usize], cfg: &LossConfig) -> f64 {
        let logp = |v: &[f64], c: usize, j: usize| {
            let m = (0..k).map(|i| v[i * t + j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|i| (v[i * t + j] - m).exp()).sum::<f64>().ln();
            v[c * t + j] - lse
        };
        let ce: f64 = labels.iter().enumerate().map(|(j, &y)| -logp(z, y, j)).sum::<f64>() / t as f64;
        let mut smooth = 0.0;
        for c in 0..k {
            for j in 1..t {
                let d = logp(z, c, j) - logp(frozen, c, j - 1);
                smooth += (d * d).min(cfg.smoothing_clamp);
            }
        }
        ce + cfg.smoothing_weight * smooth / (k * (t - 1)) as f64
    }

    #[test]
    fn smoothing_gradient_holds_previous_frame_fixed() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let (k, t) = (3, 7);
            let spread = if case % 2 == 0 { 1.0 } else { 4.0 };
            let z: Vec<f64> = (0..k * t).map(|_| rng.random_range(-spread..spread)).collect();
            let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
            let cfg = LossConfig {
                smoothing_weight: 0.15,
                smoothing_clamp: if case % 2 == 0 { 16.0 } else { 4.0 },
            };
            let logits = FeatureMap::from_vec(k, t, z.clone()).unwrap();
            let (loss, g) = stage_loss(&logits, &labels, &cfg).unwrap();
            assert!((loss - frozen_loss(&z, &z, k, t, &labels, &cfg)).abs() < 1e-12);
            let h = 1e-6;
            for i in 0..k * t {
                let mut up = z.clone();
                up[i] += h;
                let mut down = z.clone();
                down[i] -= h;
                let num = (frozen_loss(&up, &z, k, t, &labels, &cfg) - frozen_loss(&down, &z, k, t, &labels, &cfg)) / (2.0 * h);
                assert!((g.data()[i] - num).abs() < 1e-7, "case {case} entry {i}: {} vs {num}", g.data()[i]);
            }
        }
    }

    #[test]
    fn labels_outside_classes_are_rejected() {
        let logits = FeatureMap::zeros(2, 3);
        assert!(stage_loss(&logits, &[0, 2, 1], &LossConfig::default()).is_err());
        assert!(stage_loss(&logits, &[0, 1], &LossConfig::default()).is_err());
    }

    #[test]
    fn structure_changes_keep_shape() {
        let mut model = TcnModel::new(TcnConfig::new(2, 2, 2, structure(&[&[1, 2]])), 0).unwrap();
        assert!(model.set_structure(&structure(&[&[1, 2, 3]])).is_err());
        model.set_structure(&structure(&[&[5, 7]])).unwrap();
        assert_eq!(model.structure().flat(), vec![5, 7]);
        let w = LocalWindow::new(5, 0.2, 3).unwrap();
        assert!(model.enter_search(&[w.clone()], PmfKind::AbsNormalize).is_err());
        model.enter_search(&[w.clone(), w], PmfKind::AbsNormalize).unwrap();
        assert_eq!(model.branch_pmfs(), vec![vec![1.0 / 3.0; 3]; 2]);
        model.set_structure(&structure(&[&[5, 7]])).unwrap();
        assert!(!model.in_search());
        assert!(model.branch_pmfs().is_empty());
    }
}
