use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pmx_crossover;
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::estimator::{estimate_final, EstimatorConfig, Permutation};
use crate::model::{evaluate, DifferentiableModel};
use crate::numerics::{rng_from_seed, stats, sub_seed, SeededRng};
use crate::store::UpdateTermStore;
use crate::trainer::ReferenceTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    #[serde(default = "default_mutation")]
    pub mutation_prob: f64,
    #[serde(default)]
    pub seed: u64,
    /// Put the identity order into the initial population.
    #[serde(default = "default_true")]
    pub include_identity: bool,
}

fn default_mutation() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 8,
            generations: 8,
            mutation_prob: default_mutation(),
            seed: 0,
            include_identity: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 || self.population % 2 != 0 {
            return Err(Error::Config(format!("population must be even and ≥ 2, got {}", self.population)));
        }
        if self.generations == 0 {
            return Err(Error::Config("need at least one generation".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::Config(format!("mutation probability {} outside [0, 1]", self.mutation_prob)));
        }
        Ok(())
    }

    /// Upper bound on distinct fitness evaluations, `N + K·N/2`.
    pub fn max_evaluations(&self) -> usize {
        self.population + self.generations * self.population / 2
    }
}

/// One history line; generation 0 is the initial population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub median_fitness: f64,
    pub best_genome: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub best: Permutation,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
}

struct Search<'a, F> {
    fitness: &'a F,
    cache: HashMap<Permutation, f64>,
}

impl<F: Fn(&Permutation) -> Result<f64> + Sync> Search<'_, F> {
    /// Fitness of each genome, evaluating unseen ones in parallel.
    fn score(&mut self, genomes: &[Permutation]) -> Vec<f64> {
        let mut fresh: Vec<&Permutation> = Vec::new();
        for g in genomes {
            if !self.cache.contains_key(g) && !fresh.contains(&g) {
                fresh.push(g);
            }
        }
        let scored: Vec<f64> = fresh
            .par_iter()
            .map(|g| match (self.fitness)(g) {
                Ok(f) if f.is_finite() => f,
                Ok(f) => {
                    log::warn!("genome {g} has non-finite fitness {f}; treating as worst");
                    f64::INFINITY
                }
                Err(e) => {
                    log::warn!("estimation failed for genome {g}: {e}; treating as worst");
                    f64::INFINITY
                }
            })
            .collect();
        for (g, f) in fresh.into_iter().zip(scored) {
            self.cache.insert(g.clone(), f);
        }
        genomes.iter().map(|g| self.cache[g]).collect()
    }
}

fn ranked(pop: Vec<Permutation>, fit: Vec<f64>) -> Vec<(Permutation, f64)> {
    let mut pairs: Vec<_> = pop.into_iter().zip(fit).collect();
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.as_slice().cmp(b.0.as_slice())));
    pairs
}

fn record(generation: usize, ranked: &[(Permutation, f64)], best: &(Permutation, f64)) -> GenerationRecord {
    let fits: Vec<f64> = ranked.iter().map(|p| p.1).collect();
    GenerationRecord {
        generation,
        best_fitness: best.1,
        median_fitness: stats::median(&fits),
        best_genome: best.0.as_slice().to_vec(),
    }
}

fn child(rng: &mut SeededRng, survivors: &[(Permutation, f64)], mutation_prob: f64) -> Result<Permutation> {
    let n = survivors[0].0.len();
    let i = rng.random_range(0..survivors.len());
    let mut j = i;
    if survivors.len() >= 2 {
        while j == i {
            j = rng.random_range(0..survivors.len());
        }
    }
    let mut kid = if n >= 2 {
        let l = rng.random_range(1..n);
        let r = rng.random_range(l + 1..=n);
        pmx_crossover(&survivors[i].0, &survivors[j].0, l, r)?
    } else {
        survivors[i].0.clone()
    };
    if n >= 2 && rng.random_bool(mutation_prob) {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        kid.swap(a, b);
    }
    Ok(kid)
}

/// Minimise `fitness` over permutations of `len` items.
pub fn ga_search_with<F>(len: usize, cfg: &GaConfig, fitness: F) -> Result<GaResult>
where
    F: Fn(&Permutation) -> Result<f64> + Sync,
{
    cfg.validate()?;
    if len == 0 {
        return Err(Error::Input("cannot search over an empty order".into()));
    }
    let mut rng = rng_from_seed(sub_seed(cfg.seed, "ga"));
    let mut search = Search { fitness: &fitness, cache: HashMap::new() };

    let mut pop: Vec<Permutation> = Vec::with_capacity(cfg.population);
    if cfg.include_identity {
        pop.push(Permutation::identity(len));
    }
    while pop.len() < cfg.population {
        pop.push(Permutation::random(len, &mut rng));
    }
    let fit = search.score(&pop);
    let mut current = ranked(pop, fit);
    let mut best = current[0].clone();
    let mut history = vec![record(0, &current, &best)];

    let keep = cfg.population / 2;
    for generation in 1..=cfg.generations {
        current.truncate(keep);
        let kids = (0..cfg.population - keep)
            .map(|_| child(&mut rng, &current, cfg.mutation_prob))
            .collect::<Result<Vec<_>>>()?;
        let fit = search.score(&kids);
        current.extend(kids.into_iter().zip(fit));
        let (pop, fit): (Vec<_>, Vec<_>) = current.into_iter().unzip();
        current = ranked(pop, fit);
        if current[0].1 < best.1 {
            best = current[0].clone();
        }
        history.push(record(generation, &current, &best));
    }
    if !best.1.is_finite() {
        return Err(Error::Numeric("every genome failed to estimate".into()));
    }
    Ok(GaResult {
        best: best.0,
        best_fitness: best.1,
        history,
        evaluations: search.cache.len(),
    })
}

/// Estimated final metric on `validation` for an order.
pub fn estimated_fitness(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    model: &dyn DifferentiableModel,
    validation: &Samples,
    est: &EstimatorConfig,
    perm: &Permutation,
) -> Result<f64> {
    let gamma = estimate_final(store, traj, perm, est)?;
    Ok(evaluate(model, &gamma, validation)?.metric())
}

/// Search for the order with the lowest estimated validation metric.
pub fn ga_search(
    store: &UpdateTermStore,
    traj: &ReferenceTrajectory,
    model: &dyn DifferentiableModel,
    validation: &Samples,
    cfg: &GaConfig,
    est: &EstimatorConfig,
) -> Result<GaResult> {
    ga_search_with(store.steps(), cfg, |p| estimated_fitness(store, traj, model, validation, est, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Total distance of each batch from its home position.
    fn displacement(p: &Permutation) -> Result<f64> {
        Ok(p.as_slice().iter().enumerate().map(|(t, &l)| (t as f64 - l as f64).abs()).sum())
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig { population: 3, ..Default::default() }.validate().is_err());
        assert!(GaConfig { population: 0, ..Default::default() }.validate().is_err());
        assert!(GaConfig { generations: 0, ..Default::default() }.validate().is_err());
        assert!(GaConfig { mutation_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(GaConfig::default().validate().is_ok());
    }

    #[test]
    fn two_batch_case_finds_the_better_order() {
        let cfg = GaConfig { population: 2, generations: 1, include_identity: false, ..Default::default() };
        let fit = |p: &Permutation| Ok(if p.as_slice() == [1, 0] { 1.0 } else { 2.0 });
        for seed in 0..20 {
            let res = ga_search_with(2, &GaConfig { seed, ..cfg }, fit).unwrap();
            assert!(res.evaluations <= 2);
            let seen_reverse = res.history.iter().any(|h| h.best_genome == [1, 0]);
            if seen_reverse {
                assert_eq!(res.best.as_slice(), &[1, 0]);
                assert_eq!(res.best_fitness, 1.0);
            }
        }
        let both = ga_search_with(2, &GaConfig { population: 4, ..cfg }, fit).unwrap();
        assert_eq!(both.best.as_slice(), &[1, 0]);
    }

    #[test]
    fn best_never_worse_than_identity_and_history_is_monotone() {
        let res = ga_search_with(7, &GaConfig { seed: 5, ..Default::default() }, |p| {
            Ok(-displacement(p)?)
        })
        .unwrap();
        assert!(res.best_fitness <= 0.0);
        assert_eq!(res.history.len(), 9);
        for w in res.history.windows(2) {
            assert!(w[1].best_fitness <= w[0].best_fitness);
        }
        assert_eq!(res.best_fitness, -displacement(&res.best).unwrap());
    }

    #[test]
    fn evaluation_count_respects_the_bound() {
        let calls = AtomicUsize::new(0);
        let cfg = GaConfig { population: 6, generations: 5, seed: 2, ..Default::default() };
        let res = ga_search_with(4, &cfg, |p| {
            calls.fetch_add(1, Ordering::Relaxed);
            displacement(p)
        })
        .unwrap();
        let n = calls.load(Ordering::Relaxed);
        assert_eq!(n, res.evaluations);
        assert!(n <= cfg.max_evaluations());
        // only 24 orders exist, so repeats must have hit the cache
        assert!(n <= 24);
    }

    #[test]
    fn search_is_deterministic() {
        let cfg = GaConfig { population: 8, generations: 4, seed: 9, ..Default::default() };
        let a = ga_search_with(6, &cfg, displacement).unwrap();
        let b = ga_search_with(6, &cfg, displacement).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_genomes_get_worst_fitness() {
        let cfg = GaConfig { population: 4, generations: 3, seed: 1, ..Default::default() };
        let res = ga_search_with(5, &cfg, |p| {
            if p.as_slice()[0] == 0 {
                Err(Error::Divergence { step: 0 })
            } else {
                displacement(p)
            }
        })
        .unwrap();
        assert_ne!(res.best.as_slice()[0], 0);
        assert!(res.best_fitness.is_finite());
    }
}
