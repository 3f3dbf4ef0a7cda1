//! Dilation structures and the sparse global search space.
//!
//! A [`DilationStructure`] is the searched object: one dilation rate per
//! dilated layer, grouped by stage. Within a search run every structure has
//! the same shape; only the rates change.
//!
//! Text form (used in configs, logs and checkpoints):
//!
//! ```text
//! structure := stage ("|" stage)*
//! stage     := int ("," int)*
//! ```
//!
//! ASCII, no whitespace, e.g. `1,2,4|1,2,4`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Per-stage, per-layer dilation rates.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DilationStructure {
    stages: Vec<Vec<u64>>,
}

impl DilationStructure {
    pub fn new(stages: Vec<Vec<u64>>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::config("structure has no stages"));
        }
        for (s, stage) in stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::config(format!("stage {s} has no layers")));
            }
            if let Some(l) = stage.iter().position(|&d| d == 0) {
                return Err(Error::config(format!(
                    "stage {s} layer {l}: dilation must be >= 1"
                )));
            }
        }
        Ok(Self { stages })
    }

    /// Builds a structure of the given shape from row-major flat rates.
    pub fn from_flat(shape: &[usize], flat: &[u64]) -> Result<Self> {
        let total: usize = shape.iter().sum();
        if total != flat.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {total} rates, got {}",
                flat.len()
            )));
        }
        let mut stages = Vec::with_capacity(shape.len());
        let mut at = 0;
        for &len in shape {
            stages.push(flat[at..at + len].to_vec());
            at += len;
        }
        Self::new(stages)
    }

    /// The exponential pattern `1, k, k^2, ...` repeated in every stage.
    pub fn exponential(num_stages: usize, layers_per_stage: usize, base: u64) -> Result<Self> {
        let stage = (0..layers_per_stage)
            .map(|i| {
                base.checked_pow(i as u32).ok_or(Error::Overflow {
                    base,
                    exponent: i as u32,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vec![stage; num_stages])
    }

    pub fn stages(&self) -> &[Vec<u64>] {
        &self.stages
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_layers(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    pub fn flat(&self) -> Vec<u64> {
        self.stages.iter().flatten().copied().collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.stages.len() == other.stages.len()
            && self
                .stages
                .iter()
                .zip(&other.stages)
                .all(|(a, b)| a.len() == b.len())
    }

    /// Returns a copy with the rates replaced by `flat` (same shape).
    pub fn with_flat(&self, flat: &[u64]) -> Result<Self> {
        Self::from_flat(&self.shape(), flat)
    }

    pub fn encode(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DilationStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, stage) in self.stages.iter().enumerate() {
            if s > 0 {
                f.write_str("|")?;
            }
            for (l, d) in stage.iter().enumerate() {
                if l > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{d}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for DilationStructure {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        decode_structure(text)
    }
}

impl Serialize for DilationStructure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for DilationStructure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        decode_structure(&text).map_err(serde::de::Error::custom)
    }
}

pub fn encode_structure(s: &DilationStructure) -> String {
    s.encode()
}

/// Parses the text form. Errors carry the byte offset of the offending token.
pub fn decode_structure(text: &str) -> Result<DilationStructure> {
    let parse_err = |token: &str, position: usize, reason: &str| Error::Parse {
        token: token.to_string(),
        position,
        reason: reason.to_string(),
    };
    if text.is_empty() {
        return Err(parse_err("", 0, "empty structure"));
    }

    let mut stages = Vec::new();
    let mut offset = 0;
    for stage_text in text.split('|') {
        if stage_text.is_empty() {
            return Err(parse_err("", offset, "empty stage"));
        }
        let mut stage = Vec::new();
        let mut tok_offset = offset;
        for token in stage_text.split(',') {
            if token.is_empty() {
                return Err(parse_err("", tok_offset, "empty dilation"));
            }
            if !token.bytes().all(|b| b.is_ascii_digit()) {
                return Err(parse_err(token, tok_offset, "expected a positive integer"));
            }
            let d: u64 = token
                .parse()
                .map_err(|_| parse_err(token, tok_offset, "integer out of range"))?;
            if d == 0 {
                return Err(parse_err(token, tok_offset, "dilation must be >= 1"));
            }
            stage.push(d);
            tok_offset += token.len() + 1;
        }
        stages.push(stage);
        offset += stage_text.len() + 1;
    }
    DilationStructure::new(stages)
}

/// Sparse exponential dilation set `{k^0, k^1, ..., k^T}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalSearchSpace {
    base: u64,
    max_exponent: u32,
    dilations: Vec<u64>,
}

impl GlobalSearchSpace {
    pub fn new(base: u64, max_exponent: u32) -> Result<Self> {
        if base < 2 {
            return Err(Error::config(format!("sparsity base must be >= 2, got {base}")));
        }
        let dilations = (0..=max_exponent)
            .map(|i| {
                base.checked_pow(i).ok_or(Error::Overflow {
                    base,
                    exponent: max_exponent,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            base,
            max_exponent,
            dilations,
        })
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn max_exponent(&self) -> u32 {
        self.max_exponent
    }

    pub fn dilations(&self) -> &[u64] {
        &self.dilations
    }

    pub fn len(&self) -> usize {
        self.dilations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dilations.is_empty()
    }

    pub fn contains(&self, d: u64) -> bool {
        self.dilations.binary_search(&d).is_ok()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        self.dilations[rng.random_range(0..self.dilations.len())]
    }
}

pub fn build_global_space(base: u64, max_exponent: u32) -> Result<GlobalSearchSpace> {
    GlobalSearchSpace::new(base, max_exponent)
}

/// Draws every layer's rate uniformly from the space.
pub fn random_structure<R: Rng + ?Sized>(
    space: &GlobalSearchSpace,
    shape: &[usize],
    rng: &mut R,
) -> Result<DilationStructure> {
    validate_shape(shape)?;
    let stages = shape
        .iter()
        .map(|&len| (0..len).map(|_| space.sample(rng)).collect())
        .collect();
    DilationStructure::new(stages)
}

pub fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::config("structure shape is empty"));
    }
    if shape.contains(&0) {
        return Err(Error::config(format!("stage with zero layers in shape {shape:?}")));
    }
    Ok(())
}
