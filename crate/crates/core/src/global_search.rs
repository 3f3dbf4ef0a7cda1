//! Genetic coarse search over the sparse global space.
//!
//! One iteration: fitness-proportional parent selection, two-anchor segment
//! crossover, per-individual mutation of one gene, evaluation of the
//! offspring, and truncation to the best `M` of parents plus offspring.
//! [`Strategy::Random`] replaces the first three steps with fresh draws from
//! the space and is used as the baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{random_structure, validate_shape, DilationStructure, GlobalSearchSpace};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub structure: DilationStructure,
    pub fitness: Option<f64>,
}

impl Candidate {
    pub fn new(structure: DilationStructure) -> Self {
        Self {
            structure,
            fitness: None,
        }
    }

    pub fn evaluated(structure: DilationStructure, fitness: f64) -> Self {
        Self {
            structure,
            fitness: Some(fitness),
        }
    }

    fn score(&self) -> Result<f64> {
        self.fitness.ok_or_else(|| {
            Error::config(format!("candidate {} is not evaluated", self.structure))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    candidates: Vec<Candidate>,
    capacity: usize,
}

impl Population {
    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn fitness(&self) -> Vec<f64> {
        self.candidates.iter().filter_map(|c| c.fitness).collect()
    }

    /// First candidate with the highest fitness.
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.iter().fold(None, |best: Option<&Candidate>, c| match best {
            Some(b) if b.fitness >= c.fitness => Some(b),
            _ => Some(c),
        })
    }

    pub fn mean_fitness(&self) -> f64 {
        let f = self.fitness();
        if f.is_empty() {
            0.0
        } else {
            f.iter().sum::<f64>() / f.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSearchConfig {
    pub iterations: usize,
    pub population_size: usize,
    pub mutation_prob: f64,
    pub epochs: usize,
    pub seed: u64,
    pub space: GlobalSearchSpace,
    pub shape: Vec<usize>,
}

impl GlobalSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::config("global.iterations must be >= 1"));
        }
        if self.population_size < 2 {
            return Err(Error::config("global.population must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::config("global.mutation_prob must lie in [0, 1]"));
        }
        if self.epochs < 1 {
            return Err(Error::config("global.epochs must be >= 1"));
        }
        validate_shape(&self.shape)
    }

    /// Offspring produced per iteration: `ceil(M/2)` pairs, two children each.
    pub fn offspring_per_iteration(&self) -> usize {
        2 * self.population_size.div_ceil(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Genetic,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_structure: DilationStructure,
    /// Offspring generated so far, including the initial population.
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchWarning {
    pub iteration: usize,
    pub structure: Option<DilationStructure>,
    pub message: String,
}

/// Fitness function `E(C)` of a structure trained for `epochs` epochs.
///
/// Must be deterministic in `(structure, epochs, seed)`.
pub trait Fitness: Sync {
    fn evaluate(&self, structure: &DilationStructure, epochs: usize, seed: u64) -> Result<f64>;
}

impl<F> Fitness for F
where
    F: Fn(&DilationStructure, usize, u64) -> Result<f64> + Sync,
{
    fn evaluate(&self, structure: &DilationStructure, epochs: usize, seed: u64) -> Result<f64> {
        self(structure, epochs, seed)
    }
}

/// `p_i = E(C_i) / sum_j E(C_j)`.
pub fn selection_probabilities(candidates: &[Candidate]) -> Result<Vec<f64>> {
    let fitness = candidates
        .iter()
        .map(Candidate::score)
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = fitness.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateFitness);
    }
    Ok(fitness.iter().map(|f| f / total).collect())
}

/// Exchanges the flat-index segment `[start, end)` between two parents.
pub fn crossover_at(
    a: &DilationStructure,
    b: &DilationStructure,
    start: usize,
    end: usize,
) -> Result<(DilationStructure, DilationStructure)> {
    if !a.same_shape(b) {
        return Err(Error::InvalidPair(format!("{a} vs {b}")));
    }
    let (mut fa, mut fb) = (a.flat(), b.flat());
    if start > end || end > fa.len() {
        return Err(Error::config(format!(
            "anchors ({start}, {end}) outside [0, {}]",
            fa.len()
        )));
    }
    fa[start..end].swap_with_slice(&mut fb[start..end]);
    Ok((a.with_flat(&fa)?, b.with_flat(&fb)?))
}

/// Two-anchor segment crossover with anchors drawn uniformly from `[0, L]`.
pub fn crossover<R: Rng + ?Sized>(
    a: &DilationStructure,
    b: &DilationStructure,
    rng: &mut R,
) -> Result<(DilationStructure, DilationStructure)> {
    if !a.same_shape(b) {
        return Err(Error::InvalidPair(format!("{a} vs {b}")));
    }
    let len = a.num_layers();
    let u = rng.random_range(0..=len);
    let v = rng.random_range(0..=len);
    crossover_at(a, b, u.min(v), u.max(v))
}

/// Like [`mutate`], also reporting whether the individual was selected.
pub fn mutate_tracked<R: Rng + ?Sized>(
    s: &DilationStructure,
    mutation_prob: f64,
    space: &GlobalSearchSpace,
    rng: &mut R,
) -> (DilationStructure, bool) {
    if !rng.random_bool(mutation_prob.clamp(0.0, 1.0)) {
        return (s.clone(), false);
    }
    let mut flat = s.flat();
    let gene = rng.random_range(0..flat.len());
    flat[gene] = space.sample(rng);
    let mutated = s.with_flat(&flat).expect("same shape as input");
    (mutated, true)
}

/// With probability `p_m` replaces one uniformly chosen layer's rate by a
/// uniform draw from the space.
pub fn mutate<R: Rng + ?Sized>(
    s: &DilationStructure,
    mutation_prob: f64,
    space: &GlobalSearchSpace,
    rng: &mut R,
) -> DilationStructure {
    mutate_tracked(s, mutation_prob, space, rng).0
}

/// Keeps the `m` fittest candidates; ties keep input order.
pub fn select_top_m(mut candidates: Vec<Candidate>, m: usize) -> Result<Population> {
    if candidates.len() < m {
        return Err(Error::UnderfullPopulation {
            need: m,
            have: candidates.len(),
        });
    }
    for c in &candidates {
        c.score()?;
    }
    candidates.sort_by(|a, b| b.fitness.partial_cmp(&a.fitness).expect("finite fitness"));
    candidates.truncate(m);
    Ok(Population {
        candidates,
        capacity: m,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalCheckpoint {
    pub version: u32,
    pub strategy: Strategy,
    pub config: GlobalSearchConfig,
    pub iteration: usize,
    pub evaluations: usize,
    pub population: Population,
    pub rng: ChaCha8Rng,
    pub history: Vec<HistoryRow>,
    pub warnings: Vec<SearchWarning>,
    pub cache: BTreeMap<String, f64>,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct GlobalSearchOutcome {
    /// Final population, fittest first.
    pub population: Population,
    pub history: Vec<HistoryRow>,
    pub warnings: Vec<SearchWarning>,
}

impl GlobalSearchOutcome {
    pub fn best(&self) -> &Candidate {
        &self.population.candidates[0]
    }
}

/// Resumable search state. [`run_global_search`] drives it to completion;
/// callers that checkpoint step it themselves.
#[derive(Debug, Clone)]
pub struct GlobalSearch {
    cfg: GlobalSearchConfig,
    strategy: Strategy,
    iteration: usize,
    evaluations: usize,
    population: Population,
    rng: ChaCha8Rng,
    history: Vec<HistoryRow>,
    warnings: Vec<SearchWarning>,
    cache: BTreeMap<String, f64>,
    workers: usize,
}

impl GlobalSearch {
    /// Draws and evaluates the random initial population.
    pub fn start(
        cfg: GlobalSearchConfig,
        strategy: Strategy,
        fitness: &dyn Fitness,
        workers: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let initial = (0..cfg.population_size)
            .map(|_| random_structure(&cfg.space, &cfg.shape, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut search = Self {
            population: Population {
                candidates: Vec::new(),
                capacity: cfg.population_size,
            },
            evaluations: initial.len(),
            cfg,
            strategy,
            iteration: 0,
            rng,
            history: Vec::new(),
            warnings: Vec::new(),
            cache: BTreeMap::new(),
            workers: workers.max(1),
        };
        let evaluated = search.evaluate_all(initial, fitness);
        let m = search.cfg.population_size;
        search.population = select_top_m(evaluated, m)?;
        Ok(search)
    }

    pub fn resume(ckpt: GlobalCheckpoint, workers: usize) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        if ckpt.population.len() != ckpt.config.population_size
            || ckpt.history.len() != ckpt.iteration
        {
            return Err(Error::Checkpoint("inconsistent population or history".into()));
        }
        Ok(Self {
            cfg: ckpt.config,
            strategy: ckpt.strategy,
            iteration: ckpt.iteration,
            evaluations: ckpt.evaluations,
            population: ckpt.population,
            rng: ckpt.rng,
            history: ckpt.history,
            warnings: ckpt.warnings,
            cache: ckpt.cache,
            workers: workers.max(1),
        })
    }

    pub fn checkpoint(&self) -> GlobalCheckpoint {
        GlobalCheckpoint {
            version: CHECKPOINT_VERSION,
            strategy: self.strategy,
            config: self.cfg.clone(),
            iteration: self.iteration,
            evaluations: self.evaluations,
            population: self.population.clone(),
            rng: self.rng.clone(),
            history: self.history.clone(),
            warnings: self.warnings.clone(),
            cache: self.cache.clone(),
        }
    }

    pub fn config(&self) -> &GlobalSearchConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn warnings(&self) -> &[SearchWarning] {
        &self.warnings
    }

    /// Runs one iteration and returns its history row.
    pub fn step(&mut self, fitness: &dyn Fitness) -> Result<&HistoryRow> {
        self.iteration += 1;
        let offspring = match self.strategy {
            Strategy::Genetic => self.breed()?,
            Strategy::Random => (0..self.cfg.offspring_per_iteration())
                .map(|_| random_structure(&self.cfg.space, &self.cfg.shape, &mut self.rng))
                .collect::<Result<Vec<_>>>()?,
        };
        self.evaluations += offspring.len();
        let evaluated = self.evaluate_all(offspring, fitness);

        let mut pool = std::mem::take(&mut self.population.candidates);
        pool.extend(evaluated);
        self.population = select_top_m(pool, self.cfg.population_size)?;

        let best = self.population.best().expect("population is non-empty");
        self.history.push(HistoryRow {
            iteration: self.iteration,
            best_fitness: best.fitness.unwrap_or(0.0),
            mean_fitness: self.population.mean_fitness(),
            best_structure: best.structure.clone(),
            evaluations: self.evaluations,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn finish(self) -> GlobalSearchOutcome {
        GlobalSearchOutcome {
            population: self.population,
            history: self.history,
            warnings: self.warnings,
        }
    }

    fn breed(&mut self) -> Result<Vec<DilationStructure>> {
        let probs = match selection_probabilities(&self.population.candidates) {
            Ok(p) => p,
            Err(Error::DegenerateFitness) => {
                self.warnings.push(SearchWarning {
                    iteration: self.iteration,
                    structure: None,
                    message: "all fitness zero; uniform parent selection".into(),
                });
                vec![1.0; self.population.len()]
            }
            Err(e) => return Err(e),
        };
        let picker = WeightedIndex::new(&probs)
            .map_err(|e| Error::config(format!("selection weights: {e}")))?;

        let pairs = self.cfg.population_size.div_ceil(2);
        let mut children = Vec::with_capacity(2 * pairs);
        for _ in 0..pairs {
            let a = &self.population.candidates[picker.sample(&mut self.rng)].structure;
            let b = &self.population.candidates[picker.sample(&mut self.rng)].structure;
            let (x, y) = crossover(a, b, &mut self.rng)?;
            children.push(x);
            children.push(y);
        }
        Ok(children
            .iter()
            .map(|c| mutate(c, self.cfg.mutation_prob, &self.cfg.space, &mut self.rng))
            .collect())
    }

    /// Evaluates structures not yet in the cache, concurrently when
    /// `workers > 1`; results come back in input order.
    fn evaluate_all(
        &mut self,
        structures: Vec<DilationStructure>,
        fitness: &dyn Fitness,
    ) -> Vec<Candidate> {
        let keys: Vec<String> = structures.iter().map(DilationStructure::encode).collect();
        let mut pending: Vec<(String, &DilationStructure)> = Vec::new();
        for (key, s) in keys.iter().zip(&structures) {
            if !self.cache.contains_key(key) && !pending.iter().any(|(k, _)| k == key) {
                pending.push((key.clone(), s));
            }
        }

        let epochs = self.cfg.epochs;
        let root = self.cfg.seed;
        let eval_one = |(key, s): &(String, &DilationStructure)| {
            fitness.evaluate(s, epochs, seed::derive_str(root, key))
        };
        let results: Vec<Result<f64>> = if self.workers <= 1 || pending.len() <= 1 {
            pending.iter().map(eval_one).collect()
        } else {
            let chunk = pending.len().div_ceil(self.workers);
            std::thread::scope(|scope| {
                let handles: Vec<_> = pending
                    .chunks(chunk)
                    .map(|part| scope.spawn(move || part.iter().map(eval_one).collect::<Vec<_>>()))
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("evaluation worker panicked"))
                    .collect()
            })
        };

        for ((key, s), result) in pending.iter().zip(results) {
            let value = match result {
                Ok(v) if v.is_finite() && v >= 0.0 => v,
                Ok(v) => {
                    self.warn_eval(s, format!("fitness {v} is invalid; using 0"));
                    0.0
                }
                Err(e) => {
                    self.warn_eval(s, format!("evaluation failed: {e}; using 0"));
                    0.0
                }
            };
            self.cache.insert(key.clone(), value);
        }

        structures
            .into_iter()
            .zip(&keys)
            .map(|(s, key)| Candidate::evaluated(s, self.cache[key]))
            .collect()
    }

    fn warn_eval(&mut self, s: &DilationStructure, message: String) {
        self.warnings.push(SearchWarning {
            iteration: self.iteration,
            structure: Some(s.clone()),
            message,
        });
    }
}

pub fn run_global_search(
    cfg: GlobalSearchConfig,
    fitness: &dyn Fitness,
    workers: usize,
) -> Result<GlobalSearchOutcome> {
    run_strategy(cfg, Strategy::Genetic, fitness, workers)
}

/// Same budget as [`run_global_search`], but offspring are fresh random draws.
pub fn random_search_baseline(
    cfg: GlobalSearchConfig,
    fitness: &dyn Fitness,
    workers: usize,
) -> Result<GlobalSearchOutcome> {
    run_strategy(cfg, Strategy::Random, fitness, workers)
}

fn run_strategy(
    cfg: GlobalSearchConfig,
    strategy: Strategy,
    fitness: &dyn Fitness,
    workers: usize,
) -> Result<GlobalSearchOutcome> {
    let mut search = GlobalSearch::start(cfg, strategy, fitness, workers)?;
    while !search.is_done() {
        search.step(fitness)?;
    }
    Ok(search.finish())
}

pub const HISTORY_HEADER: &str = "iteration,best_fitness,mean_fitness,best_structure";

/// History as CSV; fitness values use six decimals.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for row in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            row.iteration, row.best_fitness, row.mean_fitness, row.best_structure
        );
    }
    out
}
