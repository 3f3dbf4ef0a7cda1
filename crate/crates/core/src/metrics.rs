//! Action-segmentation metrics: frame-wise accuracy, segmental edit score
//! and segmental F1 at IoU thresholds.
//!
//! Dataset aggregation: accuracy is pooled over all frames, edit is the mean
//! of per-video scores, and F1 is computed from true/false positive and false
//! negative counts pooled over all videos.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: usize,
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn iou(&self, other: &Segment) -> f64 {
        let inter = self.end.min(other.end).saturating_sub(self.start.max(other.start));
        let union = self.end.max(other.end) - self.start.min(other.start);
        inter as f64 / union as f64
    }
}

/// Maximal runs of equal labels, in order.
pub fn to_segments(labels: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(seg) if seg.label == label => seg.end = t + 1,
            _ => out.push(Segment {
                label,
                start: t,
                end: t + 1,
            }),
        }
    }
    out
}

pub fn expand_segments(segments: &[Segment]) -> Vec<usize> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n(s.label, s.len()))
        .collect()
}

fn check_pair(pred: &[usize], gt: &[usize]) -> Result<()> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::shape("label sequences must be non-empty"));
    }
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn correct_frames(pred: &[usize], gt: &[usize]) -> usize {
    pred.iter().zip(gt).filter(|(p, g)| p == g).count()
}

pub fn framewise_accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(100.0 * correct_frames(pred, gt) as f64 / gt.len() as f64)
}

/// Unit-cost Levenshtein distance, two-row dynamic program.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100 * (1 - lev(pred segments, gt segments) / max(len))` over the
/// segment class strings.
pub fn edit_score(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::shape("label sequences must be non-empty"));
    }
    let p: Vec<usize> = to_segments(pred).iter().map(|s| s.label).collect();
    let g: Vec<usize> = to_segments(gt).iter().map(|s| s.label).collect();
    let d = levenshtein(&p, &g);
    Ok(100.0 * (1.0 - d as f64 / p.len().max(g.len()) as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl SegmentCounts {
    pub fn f1(&self) -> f64 {
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        if self.tp == 0 {
            return 0.0;
        }
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

impl std::ops::AddAssign for SegmentCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!("IoU threshold {tau} outside (0, 1)")));
    }
    Ok(())
}

/// Greedy in-order matching: each predicted segment takes the unmatched
/// same-class ground-truth segment of highest IoU, and counts as a true
/// positive when that IoU is at least `tau`.
pub fn segment_counts(pred: &[usize], gt: &[usize], tau: f64) -> Result<SegmentCounts> {
    check_pair(pred, gt)?;
    check_tau(tau)?;
    let p = to_segments(pred);
    let g = to_segments(gt);
    let mut matched = vec![false; g.len()];
    let mut counts = SegmentCounts::default();
    for ps in &p {
        let best = g
            .iter()
            .enumerate()
            .filter(|(j, gs)| gs.label == ps.label && !matched[*j])
            .map(|(j, gs)| (j, ps.iou(gs)))
            .fold(None, |acc: Option<(usize, f64)>, (j, iou)| match acc {
                Some((_, b)) if b >= iou => acc,
                _ => Some((j, iou)),
            });
        match best {
            Some((j, iou)) if iou >= tau => {
                matched[j] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = g.len() - counts.tp;
    Ok(counts)
}

pub fn f1_at_iou(pred: &[usize], gt: &[usize], tau: f64) -> Result<f64> {
    Ok(segment_counts(pred, gt, tau)?.f1())
}

/// Threshold key used in reports: two decimals, e.g. `"0.10"`.
pub fn threshold_key(tau: f64) -> String {
    format!("{tau:.2}")
}

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.25, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub edit: f64,
    pub f1: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn f1_at(&self, tau: f64) -> Option<f64> {
        self.f1.get(&threshold_key(tau)).copied()
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => Some(self.acc),
            Metric::Edit => Some(self.edit),
            Metric::F1(tau) => self.f1_at(tau),
        }
    }

    /// Element-wise mean of several reports with identical thresholds.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or_else(|| Error::shape("no reports to average"))?;
        let n = reports.len() as f64;
        let mut f1 = BTreeMap::new();
        for key in first.f1.keys() {
            let sum: f64 = reports
                .iter()
                .map(|r| r.f1.get(key).copied().ok_or_else(|| Error::shape("threshold mismatch")))
                .sum::<Result<f64>>()?;
            f1.insert(key.clone(), sum / n);
        }
        Ok(MetricsReport {
            acc: reports.iter().map(|r| r.acc).sum::<f64>() / n,
            edit: reports.iter().map(|r| r.edit).sum::<f64>() / n,
            f1,
        })
    }
}

/// Aggregates over `(prediction, ground truth)` pairs, one per video.
pub fn report<P, G>(pairs: &[(P, G)], thresholds: &[f64]) -> Result<MetricsReport>
where
    P: AsRef<[usize]>,
    G: AsRef<[usize]>,
{
    if pairs.is_empty() {
        return Err(Error::shape("empty dataset"));
    }
    for &tau in thresholds {
        check_tau(tau)?;
    }
    let mut correct = 0;
    let mut frames = 0;
    let mut edit = 0.0;
    let mut counts = vec![SegmentCounts::default(); thresholds.len()];
    for (pred, gt) in pairs {
        let (pred, gt) = (pred.as_ref(), gt.as_ref());
        check_pair(pred, gt)?;
        correct += correct_frames(pred, gt);
        frames += gt.len();
        edit += edit_score(pred, gt)?;
        for (c, &tau) in counts.iter_mut().zip(thresholds) {
            *c += segment_counts(pred, gt, tau)?;
        }
    }
    Ok(MetricsReport {
        acc: 100.0 * correct as f64 / frames as f64,
        edit: edit / pairs.len() as f64,
        f1: thresholds
            .iter()
            .zip(&counts)
            .map(|(&tau, c)| (threshold_key(tau), c.f1()))
            .collect(),
    })
}

/// Metric used as search fitness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Accuracy,
    Edit,
    F1(f64),
}

impl Default for Metric {
    fn default() -> Self {
        Metric::F1(0.1)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Accuracy => f.write_str("acc"),
            Metric::Edit => f.write_str("edit"),
            Metric::F1(tau) => write!(f, "f1@{tau}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" => Ok(Metric::Accuracy),
            "edit" => Ok(Metric::Edit),
            _ => {
                let tau = s
                    .strip_prefix("f1@")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::config(format!("unknown metric {s:?}")))?;
                check_tau(tau)?;
                Ok(Metric::F1(tau))
            }
        }
    }
}
