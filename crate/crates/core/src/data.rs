//! Frame sequences, the synthetic segmentation task, on-disk datasets and
//! cross-validation folds.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! mapping.txt     "<class id> <token>" per line
//! <id>.feat       b"G2LFT1", u32 F, u32 T, then T frames of F little-endian f32
//! <id>.txt        one label token per line, T lines
//! folds.json      optional, list of fold splits
//! ```

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tcn::conv::FeatureMap;

pub const FEATURE_MAGIC: &[u8; 6] = b"G2LFT1";

/// One video: `F x T` features and `T` frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub id: String,
    pub features: FeatureMap,
    pub labels: Vec<usize>,
}

impl FrameSequence {
    pub fn new(id: impl Into<String>, features: FeatureMap, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if labels.is_empty() {
            return Err(Error::shape(format!("sequence {id} has no frames")));
        }
        if features.len() != labels.len() {
            return Err(Error::shape(format!(
                "sequence {id}: {} feature frames but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::shape(format!("sequence {id} has non-finite features")));
        }
        Ok(Self {
            id,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.channels()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Class tokens, indexed by class id.
    pub classes: Vec<String>,
    pub sequences: Vec<FrameSequence>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.sequences.iter().map(|s| s.id.clone()).collect()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.sequences.first().map(FrameSequence::feature_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Sequences whose id is in `ids`, in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<FrameSequence>> {
        ids.iter()
            .map(|id| {
                self.sequences
                    .iter()
                    .find(|s| &s.id == id)
                    .cloned()
                    .ok_or_else(|| Error::config(format!("unknown sequence id {id:?}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SegmentLengths {
    /// `1 + Geometric(1/mean)`, mean exactly `mean`.
    Geometric,
    /// Uniform integers in `[mean (1 - spread), mean (1 + spread)]`.
    Uniform { spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTaskConfig {
    pub classes: usize,
    pub videos: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub feature_dim: usize,
    /// Mean segment length per class; a single value applies to all classes.
    pub segment_mean: Vec<f64>,
    pub segment_lengths: SegmentLengths,
    pub noise: f64,
    /// Probability that a segment shares its prototype with its twin class,
    /// leaving the drift direction as the only cue.
    pub drift_prob: f64,
    /// Peak magnitude of the within-segment linear drift.
    pub drift_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            videos: 40,
            min_len: 400,
            max_len: 600,
            feature_dim: 8,
            segment_mean: vec![60.0],
            segment_lengths: SegmentLengths::Geometric,
            noise: 0.5,
            drift_prob: 0.8,
            drift_amplitude: 1.5,
            seed: 0,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synth.classes must be >= 2"));
        }
        if self.videos < 1 {
            return Err(Error::config("synth.videos must be >= 1"));
        }
        if self.min_len < 10 || self.max_len < self.min_len {
            return Err(Error::config("synth lengths need 10 <= min_len <= max_len"));
        }
        if self.feature_dim < 1 {
            return Err(Error::config("synth.feature_dim must be >= 1"));
        }
        if !(self.segment_mean.len() == 1 || self.segment_mean.len() == self.classes) {
            return Err(Error::config("synth.segment_mean needs 1 or `classes` values"));
        }
        if self.segment_mean.iter().any(|&m| !(m >= 1.0)) {
            return Err(Error::config("synth.segment_mean values must be >= 1"));
        }
        if let SegmentLengths::Uniform { spread } = self.segment_lengths {
            if !(0.0..1.0).contains(&spread) {
                return Err(Error::config("synth uniform spread must lie in [0, 1)"));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("synth.noise must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.drift_prob) || !(self.drift_amplitude >= 0.0) {
            return Err(Error::config("synth drift parameters out of range"));
        }
        Ok(())
    }

    fn mean_for(&self, class: usize) -> f64 {
        if self.segment_mean.len() == 1 {
            self.segment_mean[0]
        } else {
            self.segment_mean[class]
        }
    }

    pub fn class_tokens(&self) -> Vec<String> {
        (0..self.classes).map(|k| format!("action_{k}")).collect()
    }
}

fn sample_length<R: Rng + ?Sized>(cfg: &SynthTaskConfig, class: usize, rng: &mut R) -> usize {
    let mean = cfg.mean_for(class);
    match cfg.segment_lengths {
        SegmentLengths::Geometric => {
            if mean <= 1.0 {
                return 1;
            }
            let g = Geometric::new(1.0 / mean).expect("probability in (0, 1]");
            1 + g.sample(rng) as usize
        }
        SegmentLengths::Uniform { spread } => {
            let lo = (mean * (1.0 - spread)).round().max(1.0) as usize;
            let hi = (mean * (1.0 + spread)).round().max(lo as f64) as usize;
            rng.random_range(lo..=hi)
        }
    }
}

/// Markov label chain without self-transitions, cut into segments with the
/// configured lengths.
fn sample_labels<R: Rng + ?Sized>(cfg: &SynthTaskConfig, len: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut segments = Vec::new();
    let mut total = 0;
    let mut class = rng.random_range(0..cfg.classes);
    while total < len {
        let l = sample_length(cfg, class, rng).min(len - total);
        segments.push((class, l));
        total += l;
        let step = rng.random_range(1..cfg.classes);
        class = (class + step) % cfg.classes;
    }
    segments
}

/// Synthetic segmentation task. Each class has a prototype feature vector.
/// Classes are paired (0/1, 2/3, ...) and every segment carries a linear
/// drift along its pair's direction, rising for even classes and falling for
/// odd ones. With probability `drift_prob` a segment uses the pair's shared
/// prototype instead of its own, so only the drift direction across the
/// segment tells the twins apart; resolving those segments requires a
/// receptive field spanning a good part of the segment.
pub fn generate_synthetic(cfg: &SynthTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let f = cfg.feature_dim;
    let scale = 1.0 / (f as f64).sqrt();
    let draw_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..f).map(|_| normal.sample(rng) * scale * 2.0).collect()
    };
    let prototypes: Vec<Vec<f64>> = (0..cfg.classes).map(|_| draw_vec(&mut rng)).collect();
    let pairs = cfg.classes.div_ceil(2);
    let shared: Vec<Vec<f64>> = (0..pairs).map(|_| draw_vec(&mut rng)).collect();
    let directions: Vec<Vec<f64>> = (0..pairs)
        .map(|_| {
            let v = draw_vec(&mut rng);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let twin_exists = |c: usize| (c ^ 1) < cfg.classes;

    let mut sequences = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let segments = sample_labels(cfg, len, &mut rng);
        let mut features = FeatureMap::zeros(f, len);
        let mut labels = Vec::with_capacity(len);
        let mut t0 = 0;
        for (class, seg_len) in segments {
            let pair = class / 2;
            let ambiguous = twin_exists(class) && rng.random_bool(cfg.drift_prob);
            let base = if ambiguous { &shared[pair] } else { &prototypes[class] };
            let sign = if class % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..seg_len {
                let pos = if seg_len > 1 {
                    2.0 * j as f64 / (seg_len - 1) as f64 - 1.0
                } else {
                    0.0
                };
                let drift = cfg.drift_amplitude * sign * pos;
                for c in 0..f {
                    let value = base[c] + drift * directions[pair][c] + cfg.noise * normal.sample(&mut rng);
                    // stored at f32 precision so the on-disk form round-trips exactly
                    features.set(c, t0 + j, value as f32 as f64);
                }
                labels.push(class);
            }
            t0 += seg_len;
        }
        sequences.push(FrameSequence::new(format!("video_{v:03}"), features, labels)?);
    }
    Ok(Dataset {
        classes: cfg.class_tokens(),
        sequences,
    })
}

pub fn write_features(path: &Path, features: &FeatureMap) -> Result<()> {
    let (f, t) = (features.channels(), features.len());
    let mut buf = Vec::with_capacity(14 + 4 * f * t);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    for frame in 0..t {
        for c in 0..f {
            buf.extend_from_slice(&(features.get(c, frame) as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    if bytes.len() < 14 || &bytes[..6] != FEATURE_MAGIC {
        return Err(Error::load(path, "not a G2LFT1 feature file"));
    }
    let f = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let t = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let body = &bytes[14..];
    if body.len() != 4 * f * t {
        return Err(Error::load(
            path,
            format!("expected {} bytes of features for F={f} T={t}, found {}", 4 * f * t, body.len()),
        ));
    }
    let mut features = FeatureMap::zeros(f, t);
    for (j, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        features.set(j % f, j / f, v);
    }
    Ok(features)
}

pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut mapping = String::new();
    for (k, token) in dataset.classes.iter().enumerate() {
        mapping.push_str(&format!("{k} {token}\n"));
    }
    fs::write(root.join("mapping.txt"), mapping)?;
    for seq in &dataset.sequences {
        write_features(&root.join(format!("{}.feat", seq.id)), &seq.features)?;
        let mut labels = fs::File::create(root.join(format!("{}.txt", seq.id)))?;
        for &l in &seq.labels {
            let token = dataset
                .classes
                .get(l)
                .ok_or_else(|| Error::config(format!("label {l} has no token")))?;
            writeln!(labels, "{token}")?;
        }
    }
    Ok(())
}

fn read_mapping(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut classes: Vec<Option<String>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, token) = line
            .split_once(' ')
            .ok_or_else(|| Error::load(path, format!("line {}: expected \"<id> <token>\"", n + 1)))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::load(path, format!("line {}: bad class id {id:?}", n + 1)))?;
        if classes.len() <= id {
            classes.resize(id + 1, None);
        }
        if classes[id].replace(token.trim().to_string()).is_some() {
            return Err(Error::load(path, format!("duplicate class id {id}")));
        }
    }
    classes
        .into_iter()
        .enumerate()
        .map(|(k, c)| c.ok_or_else(|| Error::load(path, format!("class id {k} missing"))))
        .collect()
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::load(root, "dataset directory not found"));
    }
    let classes = read_mapping(&root.join("mapping.txt"))?;
    let mut ids: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::load(root, e.to_string()))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension()? == "feat").then(|| path.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::load(root, "no .feat files"));
    }

    let mut sequences = Vec::with_capacity(ids.len());
    for id in ids {
        let features = read_features(&root.join(format!("{id}.feat")))?;
        let label_path = root.join(format!("{id}.txt"));
        let text = fs::read_to_string(&label_path).map_err(|e| Error::load(&label_path, e.to_string()))?;
        let labels = text
            .lines()
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(n, token)| {
                classes.iter().position(|c| c == token).ok_or_else(|| {
                    Error::load(&label_path, format!("line {}: unknown label {token:?}", n + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != features.len() {
            return Err(Error::load(
                &label_path,
                format!("{} labels but {} feature frames", labels.len(), features.len()),
            ));
        }
        sequences.push(FrameSequence::new(id, features, labels).map_err(|e| Error::load(&label_path, e.to_string()))?);
    }
    Ok(Dataset { classes, sequences })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

/// Seeded shuffle, then contiguous partition into `num_folds` validation
/// sets; each fold trains on the rest.
pub fn make_folds(ids: &[String], num_folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if num_folds < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    if ids.len() < num_folds {
        return Err(Error::config(format!(
            "{} sequences cannot fill {num_folds} folds",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    Ok((0..num_folds)
        .map(|fold| {
            let (lo, hi) = (fold * n / num_folds, (fold + 1) * n / num_folds);
            FoldSplit {
                fold,
                train: order[..lo].iter().chain(&order[hi..]).cloned().collect(),
                validation: order[lo..hi].to_vec(),
            }
        })
        .collect())
}

pub fn save_folds(path: &Path, folds: &[FoldSplit]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(folds)? + "\n")?;
    Ok(())
}

pub fn load_folds(path: &Path) -> Result<Vec<FoldSplit>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}
