//! Browser bindings for three small views of the search: the local window and
//! its expected rate, genetic against random search on the toy landscape, and
//! impulse propagation through a dilated stack.
//!
//! Every export returns JSON so the page needs no generated type glue. The
//! plain Rust functions underneath are what the native tests exercise.

use g2l_core::landscape::HammingLandscape;
use g2l_core::tcn::conv::FeatureMap;
use g2l_core::tcn::{TcnConfig, TcnModel};
use g2l_core::{
    build_global_space, expected_dilation, random_search_baseline, run_global_search, DilationStructure,
    GlobalSearchConfig, LocalWindow, PmfKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct WindowView {
    pub raw: Vec<f64>,
    pub dilations: Vec<u64>,
    pub alpha: Vec<f64>,
    pub expected: u64,
}

/// Window around `center`, the PMF of `weights` and the rate it collapses to.
pub fn window_view(center: u64, fraction: f64, weights: &[f64], pmf: &str) -> g2l_core::Result<WindowView> {
    let kind: PmfKind = pmf.parse()?;
    let window = LocalWindow::new(center, fraction, weights.len())?;
    let alpha = kind.apply(weights)?;
    Ok(WindowView {
        raw: window.raw().to_vec(),
        dilations: window.dilations().to_vec(),
        expected: expected_dilation(&window, &alpha)?,
        alpha,
    })
}

#[derive(Debug, Serialize)]
pub struct Race {
    pub genetic: Vec<f64>,
    pub random: Vec<f64>,
    /// Evaluations spent per iteration, equal for both.
    pub evaluations: Vec<usize>,
}

/// Best-so-far curves of both searches on one hidden-target landscape with
/// 40 genes over {2^0..2^10}.
pub fn race(seed: u64, iterations: usize, population: usize, mutation_prob: f64) -> g2l_core::Result<Race> {
    let cfg = GlobalSearchConfig {
        iterations,
        population_size: population,
        mutation_prob,
        epochs: 1,
        seed,
        space: build_global_space(2, 10)?,
        shape: vec![40],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let land = HammingLandscape::random(&cfg.space, &cfg.shape, &mut rng)?;
    let genetic = run_global_search(cfg.clone(), &land, 1)?;
    let random = random_search_baseline(cfg, &land, 1)?;
    Ok(Race {
        genetic: genetic.history.iter().map(|r| r.best_fitness).collect(),
        random: random.history.iter().map(|r| r.best_fitness).collect(),
        evaluations: genetic.history.iter().map(|r| r.evaluations).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct Impulse {
    /// Largest absolute output change per frame.
    pub influence: Vec<f64>,
    pub center: usize,
    /// Sum of the dilations: the analytic reach on either side.
    pub radius: u64,
}

/// Bumps the input at the middle frame of a random single-stage model with
/// `dilations` (comma separated) and measures how far the output moves.
pub fn impulse(dilations: &str, length: usize, seed: u64) -> g2l_core::Result<Impulse> {
    let structure: DilationStructure = dilations.parse()?;
    if structure.num_stages() != 1 {
        return Err(g2l_core::Error::config("give a single stage, e.g. 1,2,4,8"));
    }
    let radius = structure.flat().iter().sum();
    let model = TcnModel::new(TcnConfig::new(2, 8, 3, structure), seed)?;
    let center = length / 2;
    let x = FeatureMap::zeros(2, length);
    let mut bumped = x.clone();
    for c in 0..2 {
        bumped.set(c, center, 1.0);
    }
    let y0 = model.forward(&x)?.pop().expect("one stage");
    let y1 = model.forward(&bumped)?.pop().expect("one stage");
    let influence = (0..length)
        .map(|t| (0..y0.channels()).map(|c| (y1.get(c, t) - y0.get(c, t)).abs()).fold(0.0, f64::max))
        .collect();
    Ok(Impulse { influence, center, radius })
}

fn to_js<T: Serialize>(r: g2l_core::Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = windowView)]
pub fn window_view_js(center: u32, fraction: f64, weights: Vec<f64>, pmf: &str) -> Result<String, JsError> {
    to_js(window_view(center as u64, fraction, &weights, pmf))
}

#[wasm_bindgen(js_name = race)]
pub fn race_js(seed: u32, iterations: u32, population: u32, mutation_prob: f64) -> Result<String, JsError> {
    to_js(race(seed as u64, iterations as usize, population as usize, mutation_prob))
}

#[wasm_bindgen(js_name = impulse)]
pub fn impulse_js(dilations: &str, length: u32, seed: u32) -> Result<String, JsError> {
    to_js(impulse(dilations, length as usize, seed as u64))
}
