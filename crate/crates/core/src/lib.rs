//! Global-to-local search of per-layer dilation rates for multi-stage
//! temporal convolutional networks.
//!
//! The search runs in two phases. [`global_search`] runs a genetic
//! algorithm over the sparse exponential set `{k^0, ..., k^T}`; each candidate
//! is scored by briefly training a [`tcn`] model and measuring a segmentation
//! metric. [`local_search`] then refines every layer's rate by training a
//! shared-kernel multi-dilated layer over a small window around it and moving
//! the rate to the expectation of the learned branch distribution.

pub mod config;
pub mod data;
pub mod error;
pub mod global_search;
pub mod landscape;
pub mod local_search;
pub mod metrics;
pub mod search_space;
pub mod seed;
pub mod tcn;

pub use error::{Error, Result};
pub use global_search::{
    crossover, mutate, random_search_baseline, run_global_search, select_top_m,
    selection_probabilities, Candidate, Fitness, GlobalSearch, GlobalSearchConfig, Population,
};
pub use metrics::{MetricsReport, Segment};
pub use search_space::{
    build_global_space, decode_structure, encode_structure, random_structure, DilationStructure,
    GlobalSearchSpace,
};
pub use config::RunConfig;
pub use local_search::{
    build_local_window, expected_dilation, pmf_from_weights, run_local_search, LocalSearchConfig,
    LocalWindow, PmfKind,
};
