//! Run configuration.
//!
//! One flat text file of `key = value` lines. Keys are grouped by a dotted
//! section prefix (`global.population`, `train.epochs`, ...). Blank lines and
//! lines starting with `#` are ignored. Unknown and repeated keys are errors so
//! a typo can never silently fall back to a default.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{SegmentLengths, SynthTaskConfig};
use crate::error::{Error, Result};
use crate::global_search::GlobalSearchConfig;
use crate::local_search::{LocalSearchConfig, PmfKind};
use crate::metrics::{Metric, DEFAULT_THRESHOLDS};
use crate::search_space::{DilationStructure, GlobalSearchSpace};
use crate::seed;
use crate::tcn::{Optimizer, TcnConfig, TrainingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    /// Dataset directory (written by `synth`, read by the other commands).
    pub root: Option<PathBuf>,
    /// Validation fold the searches score candidates on.
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSection {
    pub classes: usize,
    pub videos: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub feature_dim: usize,
    pub segment_mean: Vec<f64>,
    /// `geometric` or `uniform`.
    pub segment_lengths: String,
    pub segment_spread: f64,
    pub noise: f64,
    pub drift_prob: f64,
    pub drift_amplitude: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnSection {
    pub stages: usize,
    pub layers: usize,
    pub hidden: usize,
    pub kernel_width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSection {
    pub iterations: usize,
    pub population: usize,
    pub mutation_prob: f64,
    pub epochs: usize,
    pub base: u64,
    pub max_exponent: u32,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSection {
    pub iterations: usize,
    pub window_fraction: f64,
    pub samples: usize,
    pub epochs_per_update: usize,
    pub pmf: PmfKind,
    pub init: Option<DilationStructure>,
    pub init_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSection {
    pub fitness: Metric,
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub structure: Option<DilationStructure>,
    /// Folds to evaluate; empty means all.
    pub folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub synth: SynthSection,
    pub tcn: TcnSection,
    pub train: TrainingConfig,
    pub global: GlobalSection,
    pub local: LocalSection,
    pub metrics: MetricsSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthTaskConfig::default();
        let local = LocalSearchConfig::default();
        Self {
            seed: 0,
            data: DataSection { root: None, fold: 0 },
            synth: SynthSection {
                classes: synth.classes,
                videos: synth.videos,
                min_len: synth.min_len,
                max_len: synth.max_len,
                feature_dim: synth.feature_dim,
                segment_mean: synth.segment_mean,
                segment_lengths: "geometric".into(),
                segment_spread: 0.5,
                noise: synth.noise,
                drift_prob: synth.drift_prob,
                drift_amplitude: synth.drift_amplitude,
                folds: 4,
            },
            tcn: TcnSection {
                stages: 4,
                layers: 10,
                hidden: 16,
                kernel_width: 3,
            },
            train: TrainingConfig::default(),
            global: GlobalSection {
                iterations: 20,
                population: 16,
                mutation_prob: 0.2,
                epochs: 2,
                base: 2,
                max_exponent: 10,
                repeats: 3,
            },
            local: LocalSection {
                iterations: local.iterations,
                window_fraction: local.window_fraction,
                samples: local.samples,
                epochs_per_update: local.epochs_per_update,
                pmf: local.pmf,
                init: None,
                init_file: None,
            },
            metrics: MetricsSection {
                fitness: Metric::default(),
                thresholds: DEFAULT_THRESHOLDS.to_vec(),
            },
            eval: EvalSection {
                structure: None,
                folds: Vec::new(),
            },
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn optional<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn nonempty(value: &str) -> Option<&str> {
    (!value.is_empty()).then_some(value)
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = |v| parse_value::<usize>(key, v);
        let f = |v| parse_value::<f64>(key, v);
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "data.root" => self.data.root = nonempty(v).map(PathBuf::from),
            "data.fold" => self.data.fold = p(v)?,
            "synth.classes" => self.synth.classes = p(v)?,
            "synth.videos" => self.synth.videos = p(v)?,
            "synth.min_len" => self.synth.min_len = p(v)?,
            "synth.max_len" => self.synth.max_len = p(v)?,
            "synth.feature_dim" => self.synth.feature_dim = p(v)?,
            "synth.segment_mean" => self.synth.segment_mean = parse_list(key, v)?,
            "synth.segment_lengths" => self.synth.segment_lengths = v.to_string(),
            "synth.segment_spread" => self.synth.segment_spread = f(v)?,
            "synth.noise" => self.synth.noise = f(v)?,
            "synth.drift_prob" => self.synth.drift_prob = f(v)?,
            "synth.drift_amplitude" => self.synth.drift_amplitude = f(v)?,
            "synth.folds" => self.synth.folds = p(v)?,
            "tcn.stages" => self.tcn.stages = p(v)?,
            "tcn.layers" => self.tcn.layers = p(v)?,
            "tcn.hidden" => self.tcn.hidden = p(v)?,
            "tcn.kernel_width" => self.tcn.kernel_width = p(v)?,
            "train.epochs" => self.train.epochs = p(v)?,
            "train.optimizer" => self.train.optimizer = v.parse::<Optimizer>()?,
            "train.learning_rate" => self.train.learning_rate = f(v)?,
            "train.momentum" => self.train.momentum = f(v)?,
            "train.batch_size" => self.train.batch_size = p(v)?,
            "train.smoothing_weight" => self.train.smoothing_weight = f(v)?,
            "train.smoothing_clamp" => self.train.smoothing_clamp = f(v)?,
            "train.grad_clip" => self.train.grad_clip = f(v)?,
            "train.branch_lr_scale" => self.train.branch_lr_scale = f(v)?,
            "global.iterations" => self.global.iterations = p(v)?,
            "global.population" => self.global.population = p(v)?,
            "global.mutation_prob" => self.global.mutation_prob = f(v)?,
            "global.epochs" => self.global.epochs = p(v)?,
            "global.base" => self.global.base = parse_value(key, v)?,
            "global.max_exponent" => self.global.max_exponent = parse_value(key, v)?,
            "global.repeats" => self.global.repeats = p(v)?,
            "local.iterations" => self.local.iterations = p(v)?,
            "local.window_fraction" => self.local.window_fraction = f(v)?,
            "local.samples" => self.local.samples = p(v)?,
            "local.epochs_per_update" => self.local.epochs_per_update = p(v)?,
            "local.pmf" => self.local.pmf = v.parse()?,
            "local.init" => self.local.init = nonempty(v).map(str::parse).transpose()?,
            "local.init_file" => self.local.init_file = nonempty(v).map(PathBuf::from),
            "metrics.fitness" => self.metrics.fitness = v.parse()?,
            "metrics.thresholds" => self.metrics.thresholds = parse_list(key, v)?,
            "eval.structure" => self.eval.structure = nonempty(v).map(str::parse).transpose()?,
            "eval.folds" => {
                self.eval.folds = if v == "all" { Vec::new() } else { parse_list(key, v)? }
            }
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, t, g, l) = (&self.synth, &self.train, &self.global, &self.local);
        vec![
            ("seed", self.seed.to_string()),
            ("data.root", optional(&self.data.root.as_ref().map(|p| p.display()))),
            ("data.fold", self.data.fold.to_string()),
            ("synth.classes", s.classes.to_string()),
            ("synth.videos", s.videos.to_string()),
            ("synth.min_len", s.min_len.to_string()),
            ("synth.max_len", s.max_len.to_string()),
            ("synth.feature_dim", s.feature_dim.to_string()),
            ("synth.segment_mean", join(&s.segment_mean)),
            ("synth.segment_lengths", s.segment_lengths.clone()),
            ("synth.segment_spread", s.segment_spread.to_string()),
            ("synth.noise", s.noise.to_string()),
            ("synth.drift_prob", s.drift_prob.to_string()),
            ("synth.drift_amplitude", s.drift_amplitude.to_string()),
            ("synth.folds", s.folds.to_string()),
            ("tcn.stages", self.tcn.stages.to_string()),
            ("tcn.layers", self.tcn.layers.to_string()),
            ("tcn.hidden", self.tcn.hidden.to_string()),
            ("tcn.kernel_width", self.tcn.kernel_width.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.optimizer", t.optimizer.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.momentum", t.momentum.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.smoothing_weight", t.smoothing_weight.to_string()),
            ("train.smoothing_clamp", t.smoothing_clamp.to_string()),
            ("train.grad_clip", t.grad_clip.to_string()),
            ("train.branch_lr_scale", t.branch_lr_scale.to_string()),
            ("global.iterations", g.iterations.to_string()),
            ("global.population", g.population.to_string()),
            ("global.mutation_prob", g.mutation_prob.to_string()),
            ("global.epochs", g.epochs.to_string()),
            ("global.base", g.base.to_string()),
            ("global.max_exponent", g.max_exponent.to_string()),
            ("global.repeats", g.repeats.to_string()),
            ("local.iterations", l.iterations.to_string()),
            ("local.window_fraction", l.window_fraction.to_string()),
            ("local.samples", l.samples.to_string()),
            ("local.epochs_per_update", l.epochs_per_update.to_string()),
            ("local.pmf", l.pmf.to_string()),
            ("local.init", optional(&l.init)),
            ("local.init_file", optional(&l.init_file.as_ref().map(|p| p.display()))),
            ("metrics.fitness", self.metrics.fitness.to_string()),
            ("metrics.thresholds", join(&self.metrics.thresholds)),
            ("eval.structure", optional(&self.eval.structure)),
            (
                "eval.folds",
                if self.eval.folds.is_empty() { "all".into() } else { join(&self.eval.folds) },
            ),
        ]
    }

    /// The effective configuration as a config file that parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let this = key.split_once('.').map_or("", |(s, _)| s);
            if this != section {
                out.push('\n');
                section = this;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Checks everything a command might use, before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.synth_config()?.validate()?;
        if self.synth.folds < 2 || self.synth.folds > self.synth.videos {
            return Err(Error::config("synth.folds must lie in [2, synth.videos]"));
        }
        if self.tcn.stages < 1 || self.tcn.layers < 1 {
            return Err(Error::config("tcn.stages and tcn.layers must be >= 1"));
        }
        if self.tcn.hidden < 1 || self.tcn.kernel_width % 2 == 0 {
            return Err(Error::config("tcn.hidden must be >= 1 and tcn.kernel_width odd"));
        }
        self.train.validate()?;
        self.global_config()?.validate()?;
        if self.global.repeats < 1 {
            return Err(Error::config("global.repeats must be >= 1"));
        }
        self.local_config().validate()?;
        if self.metrics.thresholds.is_empty() {
            return Err(Error::config("metrics.thresholds must not be empty"));
        }
        for &tau in &self.metrics.thresholds {
            format!("f1@{tau}").parse::<Metric>()?;
        }
        for s in [&self.local.init, &self.eval.structure].into_iter().flatten() {
            self.check_shape(s)?;
        }
        Ok(())
    }

    /// Structures in one run share the configured stage/layer shape.
    pub fn check_shape(&self, s: &DilationStructure) -> Result<()> {
        if s.shape() != self.shape() {
            return Err(Error::config(format!(
                "structure {s} has shape {:?}, config expects {:?}",
                s.shape(),
                self.shape()
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.tcn.layers; self.tcn.stages]
    }

    pub fn synth_config(&self) -> Result<SynthTaskConfig> {
        let s = &self.synth;
        let segment_lengths = match s.segment_lengths.as_str() {
            "geometric" => SegmentLengths::Geometric,
            "uniform" => SegmentLengths::Uniform {
                spread: s.segment_spread,
            },
            other => {
                return Err(Error::config(format!(
                    "synth.segment_lengths must be geometric or uniform, got {other:?}"
                )))
            }
        };
        Ok(SynthTaskConfig {
            classes: s.classes,
            videos: s.videos,
            min_len: s.min_len,
            max_len: s.max_len,
            feature_dim: s.feature_dim,
            segment_mean: s.segment_mean.clone(),
            segment_lengths,
            noise: s.noise,
            drift_prob: s.drift_prob,
            drift_amplitude: s.drift_amplitude,
            seed: self.sub_seed("synth"),
        })
    }

    /// Model template; the structure is replaced per candidate.
    pub fn tcn_template(&self, input_dim: usize, classes: usize) -> Result<TcnConfig> {
        Ok(TcnConfig {
            input_dim,
            hidden: self.tcn.hidden,
            classes,
            kernel_width: self.tcn.kernel_width,
            structure: self.baseline()?,
        })
    }

    /// Exponential structure `1, 2, 4, ...` in every stage.
    pub fn baseline(&self) -> Result<DilationStructure> {
        DilationStructure::exponential(self.tcn.stages, self.tcn.layers, 2)
    }

    pub fn global_config(&self) -> Result<GlobalSearchConfig> {
        let g = &self.global;
        Ok(GlobalSearchConfig {
            iterations: g.iterations,
            population_size: g.population,
            mutation_prob: g.mutation_prob,
            epochs: g.epochs,
            seed: self.sub_seed("global"),
            space: GlobalSearchSpace::new(g.base, g.max_exponent)?,
            shape: self.shape(),
        })
    }

    pub fn local_config(&self) -> LocalSearchConfig {
        let l = &self.local;
        LocalSearchConfig {
            iterations: l.iterations,
            window_fraction: l.window_fraction,
            samples: l.samples,
            epochs_per_update: l.epochs_per_update,
            pmf: l.pmf,
            seed: self.sub_seed("local"),
        }
    }

    /// Seed of one pipeline part, derived from the root seed.
    pub fn sub_seed(&self, part: &str) -> u64 {
        seed::derive_str(self.seed, part)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidConfig(msg) => msg,
        other => other.to_string(),
    }
}
