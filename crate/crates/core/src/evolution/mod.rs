//! Evolutionary algorithm kernel: populations, selection, variation, the
//! generational loop with optional elitism and random immigrants, and the
//! GENITOR steady-state variant.
//!
//! All randomness used for fitness evaluation comes from per-individual
//! streams derived from `(seed, generation, index)`, so a run's trajectory
//! does not depend on how many threads evaluate the population.

mod genitor;
mod operators;
mod select;

pub use genitor::{run_genitor, steady_state_step, GenitorConfig, SteadyStateReport};
pub use operators::{mutate, one_point_crossover, one_point_crossover_at, DEFAULT_SIGMA};
pub use select::{select_proportional, select_tournament, selection_probabilities, SHIFT_EPSILON};

use rand::Rng;
use rayon::prelude::*;

use crate::credit::{evaluate_fitness, FitnessConfig};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policies::{decode, Chromosome, Schema};
use crate::rng::{self, Rng as StreamRng};

/// Stream tags keeping the derived random streams apart.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const VARIATION: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const IMMIGRANT_EVAL: u64 = 4;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub chromosome: Chromosome,
    pub fitness: Option<f64>,
    /// Generations survived unchanged.
    pub age: u32,
}

impl Individual {
    pub fn new(chromosome: Chromosome) -> Self {
        Individual { chromosome, fitness: None, age: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub members: Vec<Individual>,
    pub generation: u32,
}

impl Population {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn fitnesses(&self) -> Result<Vec<f64>> {
        self.members
            .iter()
            .enumerate()
            .map(|(i, m)| m.fitness.ok_or(Error::Unevaluated(i)))
            .collect()
    }

    /// Index of the fittest member (lowest index on ties).
    pub fn best_index(&self) -> Result<usize> {
        let f = self.fitnesses()?;
        let mut best = 0;
        for (i, &x) in f.iter().enumerate() {
            if x > f[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn best_fitness(&self) -> Result<f64> {
        Ok(self.fitnesses()?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn mean_fitness(&self) -> Result<f64> {
        let f = self.fitnesses()?;
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    }

    /// Member indices sorted by descending fitness, stable on ties.
    pub fn ranking(&self) -> Result<Vec<usize>> {
        let f = self.fitnesses()?;
        let mut idx: Vec<usize> = (0..f.len()).collect();
        idx.sort_by(|&a, &b| f[b].total_cmp(&f[a]));
        Ok(idx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Proportional,
    Tournament(usize),
}

impl Selection {
    /// Draws a parent index. Proportional selection over an all-zero
    /// population falls back to a uniform draw.
    pub fn select<R: Rng + ?Sized>(&self, pop: &Population, rng: &mut R) -> Result<usize> {
        match *self {
            Selection::Tournament(k) => select_tournament(pop, k, rng),
            Selection::Proportional => match select_proportional(pop, rng) {
                Err(Error::AllZeroFitness) => Ok(rng.random_range(0..pop.len())),
                other => other,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EaConfig {
    pub population_size: usize,
    pub crossover_prob: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Standard deviation of real-gene mutation.
    pub mutation_sigma: f64,
    pub selection: Selection,
    pub elitism: usize,
    pub immigrant_fraction: f64,
    pub generations: u32,
    pub seed: u64,
}

impl Default for EaConfig {
    /// Binary tournament, 50 policies, crossover 0.8, mutation 0.01.
    fn default() -> Self {
        EaConfig {
            population_size: 50,
            crossover_prob: 0.8,
            mutation_rate: 0.01,
            mutation_sigma: DEFAULT_SIGMA,
            selection: Selection::Tournament(2),
            elitism: 0,
            immigrant_fraction: 0.0,
            generations: 50,
            seed: 0,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.population_size == 0 {
            return bad("population_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return bad(format!("crossover_prob {} outside [0, 1]", self.crossover_prob));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad(format!("mutation_rate {} outside [0, 1]", self.mutation_rate));
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return bad(format!("mutation_sigma {} must be finite and non-negative", self.mutation_sigma));
        }
        if !(0.0..=0.3).contains(&self.immigrant_fraction) {
            return bad(format!("immigrant_fraction {} outside [0, 0.3]", self.immigrant_fraction));
        }
        // elitism == size is the frozen-population configuration
        if self.elitism > self.population_size {
            return bad(format!("elitism {} exceeds population size {}", self.elitism, self.population_size));
        }
        if let Selection::Tournament(0) = self.selection {
            return bad("tournament size must be at least 1".into());
        }
        Ok(())
    }

    pub fn immigrants(&self) -> usize {
        (self.immigrant_fraction * self.population_size as f64).floor() as usize
    }
}

/// Assigns a fitness to a chromosome. Must be a pure function of its
/// arguments for runs to be reproducible.
pub trait Evaluator: Sync {
    fn evaluate(&self, chromosome: &Chromosome, rng: &mut StreamRng) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&Chromosome, &mut StreamRng) -> Result<f64> + Sync,
{
    fn evaluate(&self, chromosome: &Chromosome, rng: &mut StreamRng) -> Result<f64> {
        self(chromosome, rng)
    }
}

/// Decodes a chromosome and scores the policy in an environment.
pub struct PolicyEvaluator<'a> {
    pub env: &'a Environment,
    pub schema: &'a Schema,
    pub fitness: FitnessConfig,
}

impl Evaluator for PolicyEvaluator<'_> {
    fn evaluate(&self, chromosome: &Chromosome, rng: &mut StreamRng) -> Result<f64> {
        let policy = decode(chromosome, self.schema)?;
        evaluate_fitness(self.env, &policy, &self.fitness, rng)
    }
}

/// Evaluates every member without a fitness, in parallel.
pub fn evaluate_population<E: Evaluator + ?Sized>(pop: &mut Population, evaluator: &E, seed: u64, tag: u64) -> Result<()> {
    let generation = pop.generation as u64;
    pop.members
        .par_iter_mut()
        .enumerate()
        .filter(|(_, m)| m.fitness.is_none())
        .try_for_each(|(i, m)| {
            let mut r = rng::stream(seed, &[tag, generation, i as u64]);
            m.fitness = Some(evaluator.evaluate(&m.chromosome, &mut r)?);
            Ok(())
        })
}

/// Random, evaluated generation-zero population.
pub fn initial_population<E: Evaluator + ?Sized>(cfg: &EaConfig, schema: &Schema, evaluator: &E) -> Result<Population> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, &[tags::INIT]);
    let members = (0..cfg.population_size)
        .map(|_| Individual::new(schema.random(&mut r)))
        .collect();
    let mut pop = Population { members, generation: 0 };
    evaluate_population(&mut pop, evaluator, cfg.seed, tags::EVAL)?;
    Ok(pop)
}

/// One generational step: elites carried over, the rest bred by
/// select, clone, crossover and mutate, then the worst non-elite members
/// swapped for random immigrants.
pub fn next_generation<E, R>(
    pop: &Population,
    cfg: &EaConfig,
    schema: &Schema,
    evaluator: &E,
    rng: &mut R,
) -> Result<Population>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if pop.len() != cfg.population_size {
        return Err(Error::InvalidConfig(format!(
            "population has {} members, config says {}",
            pop.len(),
            cfg.population_size
        )));
    }
    let mut elite: Vec<usize> = pop.ranking()?.into_iter().take(cfg.elitism).collect();
    elite.sort_unstable();
    let mut members: Vec<Individual> = elite
        .iter()
        .map(|&i| {
            let mut m = pop.members[i].clone();
            m.age += 1;
            m
        })
        .collect();
    let n_elite = members.len();

    while members.len() < cfg.population_size {
        let a = cfg.selection.select(pop, rng)?;
        let b = cfg.selection.select(pop, rng)?;
        let (p1, p2) = (&pop.members[a].chromosome, &pop.members[b].chromosome);
        let (c1, c2) = if rng.random_bool(cfg.crossover_prob) {
            one_point_crossover(p1, p2, rng)?
        } else {
            (p1.clone(), p2.clone())
        };
        for child in [c1, c2] {
            if members.len() < cfg.population_size {
                members.push(Individual::new(mutate(&child, cfg.mutation_rate, cfg.mutation_sigma, schema, rng)));
            }
        }
    }

    let mut next = Population { members, generation: pop.generation + 1 };
    evaluate_population(&mut next, evaluator, cfg.seed, tags::EVAL)?;

    let immigrants = cfg.immigrants().min(next.len() - n_elite);
    if immigrants > 0 {
        let f = next.fitnesses()?;
        let mut non_elite: Vec<usize> = (n_elite..next.len()).collect();
        non_elite.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        for &i in non_elite.iter().take(immigrants) {
            next.members[i] = Individual::new(schema.random(rng));
        }
        evaluate_population(&mut next, evaluator, cfg.seed, tags::IMMIGRANT_EVAL)?;
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationStats {
    pub generation: u32,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub fraction_optimal: Option<f64>,
}

impl GenerationStats {
    pub fn of<F>(pop: &Population, is_optimal: Option<F>) -> Result<Self>
    where
        F: Fn(&Chromosome) -> bool,
    {
        let fraction_optimal = is_optimal.map(|f| {
            pop.members.iter().filter(|m| f(&m.chromosome)).count() as f64 / pop.len() as f64
        });
        Ok(GenerationStats {
            generation: pop.generation,
            best_fitness: pop.best_fitness()?,
            mean_fitness: pop.mean_fitness()?,
            fraction_optimal,
        })
    }

    pub const CSV_HEADER: &'static str = "generation,best_fitness,mean_fitness,fraction_optimal";

    pub fn csv_row(&self) -> String {
        let frac = self.fraction_optimal.map(|f| f.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.generation, self.best_fitness, self.mean_fitness, frac)
    }
}

pub struct EvolutionRun {
    pub population: Population,
    pub history: Vec<GenerationStats>,
}

/// Runs `cfg.generations` generational steps from a random population.
pub fn evolve<E, F>(cfg: &EaConfig, schema: &Schema, evaluator: &E, is_optimal: Option<F>) -> Result<EvolutionRun>
where
    E: Evaluator + ?Sized,
    F: Fn(&Chromosome) -> bool,
{
    let mut pop = initial_population(cfg, schema, evaluator)?;
    let mut r = rng::stream(cfg.seed, &[tags::VARIATION]);
    let mut history = vec![GenerationStats::of(&pop, is_optimal.as_ref())?];
    for _ in 0..cfg.generations {
        pop = next_generation(&pop, cfg, schema, evaluator, &mut r)?;
        history.push(GenerationStats::of(&pop, is_optimal.as_ref())?);
    }
    Ok(EvolutionRun { population: pop, history })
}
