//! Genetic search over detector subsets. A subset's fitness is the
//! validation score of the fixed meta-learner trained on the subset's score
//! columns.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::ScoreMatrix;
use crate::error::{Error, Result};
use crate::meta::{train_meta, Features, MetaConfig, TrainedMeta};
use crate::metrics::{auc_pr_or_zero, best_f1_threshold};
use crate::seed;

/// Sorted, duplicate-free pool indices.
pub type Subset = Vec<usize>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    /// Elite count; `None` means `max(2, P / 5)`.
    pub elite: Option<usize>,
    pub parents: usize,
    /// Weight of F1 against AUC-PR in the fitness.
    pub sigma: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 20,
            generations: 20,
            mutation_rate: 0.1,
            elite: None,
            parents: 2,
            sigma: 1.0,
        }
    }
}

impl GaConfig {
    pub fn elite_count(&self) -> usize {
        self.elite.unwrap_or((self.population / 5).max(2))
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.generations == 0 || self.parents == 0 {
            return Err(Error::Config("ga: population >= 2, generations >= 1, parents >= 1 required".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config("ga: mutation_rate and sigma must lie in [0, 1]".into()));
        }
        let k = self.elite_count();
        if k == 0 || k >= self.population {
            return Err(Error::Config(format!("ga.elite must satisfy 1 <= k < P, got {k}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub subset: Subset,
    pub ids: Vec<String>,
    pub f1: f64,
    pub auc_pr: f64,
    pub fitness: f64,
    /// Best-F1 threshold on the meta-learner's validation output.
    pub threshold: f64,
    /// Generation in which the subset was first evaluated.
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_ids: Vec<String>,
}

/// Score matrices and labels of the meta-learner's train and validation
/// folds. Columns are the full pool in pool order.
#[derive(Debug, Clone)]
pub struct Folds {
    pub train: ScoreMatrix,
    pub train_labels: Vec<u8>,
    pub val: ScoreMatrix,
    pub val_labels: Vec<u8>,
}

impl Folds {
    /// Chronological split: the last `val_fraction` of rows validate.
    pub fn chronological(scores: &ScoreMatrix, labels: &[u8], val_fraction: f64) -> Result<Self> {
        if labels.len() != scores.rows() {
            return Err(Error::DimensionMismatch {
                expected: scores.rows(),
                actual: labels.len(),
            });
        }
        let n = scores.rows();
        let n_val = (val_fraction * n as f64).floor() as usize;
        if n_val == 0 || n_val >= n {
            return Err(Error::insufficient(format!("cannot split {n} rows into train and validation folds")));
        }
        let cut = n - n_val;
        Ok(Self {
            train: scores.slice_rows(0, cut),
            train_labels: labels[..cut].to_vec(),
            val: scores.slice_rows(cut, n),
            val_labels: labels[cut..].to_vec(),
        })
    }

    pub fn pool_size(&self) -> usize {
        self.train.cols()
    }

    fn validate(&self) -> Result<()> {
        if self.train.ids() != self.val.ids() {
            return Err(Error::invalid("train and validation folds disagree on detector ids"));
        }
        if self.train_labels.len() != self.train.rows() || self.val_labels.len() != self.val.rows() {
            return Err(Error::invalid("fold labels do not match fold rows"));
        }
        Ok(())
    }
}

/// Memoized subset evaluator. Fitness is a pure function of the subset
/// given the folds, meta config, blend and seed.
#[derive(Debug)]
pub struct Evaluator<'a> {
    folds: &'a Folds,
    meta: MetaConfig,
    sigma: f64,
    meta_seed: u64,
    cache: Mutex<HashMap<Subset, FitnessRecord>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(folds: &'a Folds, meta: MetaConfig, sigma: f64, seed: u64) -> Result<Self> {
        folds.validate()?;
        meta.validate()?;
        Ok(Self {
            folds,
            meta,
            sigma,
            meta_seed: seed::derive(seed, "meta"),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn evaluations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    /// Trains the meta-learner on the subset's train-fold columns.
    pub fn train(&self, subset: &[usize]) -> Result<TrainedMeta> {
        let x = features(&self.folds.train, subset)?;
        train_meta(&self.meta, &x, &self.folds.train_labels, self.meta_seed)
    }

    pub fn evaluate(&self, subset: &[usize], generation: usize) -> Result<FitnessRecord> {
        if let Some(hit) = self.cache.lock().expect("cache lock").get(subset) {
            return Ok(hit.clone());
        }
        let meta = self.train(subset)?;
        let pred = meta.predict(&features(&self.folds.val, subset)?)?;
        let (threshold, f1) = best_f1_threshold(&pred, &self.folds.val_labels)?;
        let auc_pr = auc_pr_or_zero(&pred, &self.folds.val_labels);
        let rec = FitnessRecord {
            subset: subset.to_vec(),
            ids: subset.iter().map(|&i| self.folds.train.ids()[i].clone()).collect(),
            f1,
            auc_pr,
            fitness: self.sigma * f1 + (1.0 - self.sigma) * auc_pr,
            threshold,
            generation,
        };
        // a concurrent evaluation of the same subset produced the same record
        Ok(self
            .cache
            .lock()
            .expect("cache lock")
            .entry(subset.to_vec())
            .or_insert(rec)
            .clone())
    }
}

/// Row-major stacked features of `subset`'s columns.
pub fn features(m: &ScoreMatrix, subset: &[usize]) -> Result<Features> {
    if subset.is_empty() || subset.iter().any(|&j| j >= m.cols()) {
        return Err(Error::invalid(format!("invalid subset {subset:?} for {} detectors", m.cols())));
    }
    Features::new(m.select(subset), m.rows(), subset.len())
}

fn normalize(mut s: Subset) -> Subset {
    s.sort_unstable();
    s.dedup();
    s
}

/// Uniform crossover: each index of the union is kept with probability
/// 1/2 when exactly one parent has it, always when both do. An empty child
/// gets one uniform member of the union.
pub fn crossover(a: &[usize], b: &[usize], rng: &mut impl Rng) -> Subset {
    let union = normalize(a.iter().chain(b).copied().collect());
    let mut child: Subset = union
        .iter()
        .copied()
        .filter(|i| {
            let in_a = a.contains(i);
            let in_b = b.contains(i);
            // inherit membership from a uniformly chosen parent
            if rng.random::<bool>() {
                in_a
            } else {
                in_b
            }
        })
        .collect();
    if child.is_empty() && !union.is_empty() {
        child.push(union[rng.random_range(0..union.len())]);
    }
    child
}

/// One gate `rand() < mu`; if open, a uniform action among add, remove and
/// swap. Impossible actions are no-ops; the result is never empty.
pub fn mutate(s: &[usize], pool: usize, mu: f64, rng: &mut impl Rng) -> Subset {
    let mut out = s.to_vec();
    if !(rng.random::<f64>() < mu) {
        return out;
    }
    let outside: Vec<usize> = (0..pool).filter(|i| !s.contains(i)).collect();
    match rng.random_range(0..3) {
        0 if !outside.is_empty() => out.push(outside[rng.random_range(0..outside.len())]),
        1 if out.len() > 1 => {
            out.remove(rng.random_range(0..out.len()));
        }
        2 if !outside.is_empty() && !out.is_empty() => {
            let at = rng.random_range(0..out.len());
            out[at] = outside[rng.random_range(0..outside.len())];
        }
        _ => {}
    }
    if out.is_empty() && pool > 0 {
        out.push(rng.random_range(0..pool));
    }
    normalize(out)
}

fn random_subset(pool: usize, rng: &mut impl Rng) -> Subset {
    loop {
        let s: Subset = (0..pool).filter(|_| rng.random::<bool>()).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

/// `P` distinct nonempty subsets, or all of them when `P >= 2^M - 1`.
fn initial_population(pool: usize, p: usize, rng: &mut impl Rng) -> Vec<Subset> {
    let total = if pool >= 63 { u64::MAX } else { (1u64 << pool) - 1 };
    if (p as u64) >= total {
        return (1..=total)
            .map(|mask| (0..pool).filter(|&i| mask >> i & 1 == 1).collect())
            .collect();
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(p);
    while out.len() < p {
        let s = random_subset(pool, rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaOutcome {
    pub best: FitnessRecord,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

fn better(a: &FitnessRecord, b: &FitnessRecord) -> bool {
    // higher fitness, then smaller subset, then lexicographic
    a.fitness > b.fitness || (a.fitness == b.fitness && (a.subset.len(), &a.subset) < (b.subset.len(), &b.subset))
}

pub fn run_ga(cfg: &GaConfig, folds: &Folds, meta: &MetaConfig, seed: u64) -> Result<GaOutcome> {
    cfg.validate()?;
    let m = folds.pool_size();
    if m == 0 {
        return Err(Error::invalid("empty detector pool"));
    }
    let eval = Evaluator::new(folds, *meta, cfg.sigma, seed)?;
    let mut rng = seed::stage_rng(seed, "ga.evolve");
    let mut population = initial_population(m, cfg.population, &mut rng);
    let k = cfg.elite_count().min(population.len());
    let mut best: Option<FitnessRecord> = None;
    let mut history = Vec::with_capacity(cfg.generations);

    for generation in 0..cfg.generations {
        let mut scored: Vec<FitnessRecord> = population
            .par_iter()
            .map(|s| eval.evaluate(s, generation))
            .collect::<Result<_>>()?;
        let mean = scored.iter().map(|r| r.fitness).sum::<f64>() / scored.len() as f64;
        scored.sort_by(|a, b| {
            if better(a, b) {
                std::cmp::Ordering::Less
            } else if better(b, a) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        });
        if best.as_ref().is_none_or(|b| better(&scored[0], b)) {
            best = Some(scored[0].clone());
        }
        let b = best.as_ref().expect("set above");
        history.push(GenerationRecord {
            generation,
            best_fitness: b.fitness,
            mean_fitness: mean,
            best_ids: b.ids.clone(),
        });
        if generation + 1 == cfg.generations {
            break;
        }
        let elites: Vec<Subset> = scored[..k].iter().map(|r| r.subset.clone()).collect();
        let mut next = elites.clone();
        while next.len() < cfg.population {
            let mut child = elites[rng.random_range(0..k)].clone();
            for _ in 1..cfg.parents.max(2) {
                let other = &elites[rng.random_range(0..k)];
                child = crossover(&child, other, &mut rng);
            }
            next.push(mutate(&child, m, cfg.mutation_rate, &mut rng));
        }
        population = next;
    }
    Ok(GaOutcome {
        best: best.expect("at least one generation"),
        history,
        evaluations: eval.evaluations(),
    })
}

/// Evaluates every nonempty subset; the reference optimum for small pools.
pub fn exhaustive(folds: &Folds, meta: &MetaConfig, sigma: f64, seed: u64) -> Result<FitnessRecord> {
    let m = folds.pool_size();
    if m == 0 || m > 16 {
        return Err(Error::invalid("exhaustive search supports 1..=16 detectors"));
    }
    let eval = Evaluator::new(folds, *meta, sigma, seed)?;
    let all = initial_population(m, usize::MAX, &mut seed::rng(0));
    let recs: Vec<FitnessRecord> = all.par_iter().map(|s| eval.evaluate(s, 0)).collect::<Result<_>>()?;
    let mut best = recs[0].clone();
    for r in &recs[1..] {
        if better(r, &best) {
            best = r.clone();
        }
    }
    Ok(best)
}
