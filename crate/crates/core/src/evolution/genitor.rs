//! GENITOR-style steady-state search over real-valued chromosomes that carry
//! their own crossover probability.

use rand::Rng;

use crate::error::{Error, Result};
use crate::policies::{Chromosome, Schema};
use crate::rng;

use super::{
    evaluate_population, mutate, one_point_crossover, tags, Evaluator, GenerationStats, Individual,
    Population, Selection,
};

#[derive(Clone, Debug, PartialEq)]
pub struct GenitorConfig {
    pub population_size: usize,
    pub selection: Selection,
    /// Step applied to the offspring's crossover gene.
    pub delta: f64,
    pub gene_min: f64,
    pub gene_max: f64,
    /// Per-gene probability of Gaussian perturbation in the mutation branch.
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    /// Offspring produced in a run.
    pub steps: u32,
    pub seed: u64,
}

impl Default for GenitorConfig {
    fn default() -> Self {
        GenitorConfig {
            population_size: 50,
            selection: Selection::Tournament(2),
            delta: 0.05,
            gene_min: 0.05,
            gene_max: 0.95,
            mutation_rate: 0.1,
            mutation_sigma: super::DEFAULT_SIGMA,
            steps: 2500,
            seed: 0,
        }
    }
}

impl GenitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::InvalidConfig("steady-state population needs at least 2 members".into()));
        }
        if !(0.0 <= self.gene_min && self.gene_min <= self.gene_max && self.gene_max <= 1.0) {
            return Err(Error::InvalidConfig("crossover gene bounds must satisfy 0 <= min <= max <= 1".into()));
        }
        if !(self.delta >= 0.0) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::InvalidConfig("delta and mutation_rate must be valid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyStateReport {
    pub crossed_over: bool,
    pub parent_fitness: f64,
    pub parent_gene: f64,
    pub offspring_fitness: f64,
    pub offspring_gene: f64,
    pub replaced: usize,
}

/// Breeds, evaluates and inserts a single offspring.
///
/// With probability equal to the first parent's crossover gene the two
/// parents are recombined; otherwise a clone of the first parent is mutated.
/// The offspring inherits that gene, lowered by `delta` if it beat the parent
/// and raised otherwise, then replaces the current worst member.
pub fn steady_state_step<E, R>(
    pop: &mut Population,
    cfg: &GenitorConfig,
    schema: &Schema,
    evaluator: &E,
    rng: &mut R,
) -> Result<SteadyStateReport>
where
    E: Evaluator + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let a = cfg.selection.select(pop, rng)?;
    let b = cfg.selection.select(pop, rng)?;
    let parent = &pop.members[a];
    let parent_fitness = parent.fitness.ok_or(Error::Unevaluated(a))?;
    let gene = parent.chromosome.crossover_gene().ok_or(Error::MissingCrossoverGene)?;

    let crossed_over = rng.random_bool(gene.clamp(0.0, 1.0));
    let child = if crossed_over {
        one_point_crossover(&parent.chromosome, &pop.members[b].chromosome, rng)?.0
    } else {
        mutate(&parent.chromosome, cfg.mutation_rate, cfg.mutation_sigma, schema, rng)
    };

    let step = pop.generation as u64;
    let mut r = rng::stream(cfg.seed, &[tags::EVAL, u64::MAX, step]);
    let offspring_fitness = evaluator.evaluate(&child, &mut r)?;
    let offspring_gene = if offspring_fitness > parent_fitness { gene - cfg.delta } else { gene + cfg.delta }
        .clamp(cfg.gene_min, cfg.gene_max);
    let child = match child {
        Chromosome::Real { genes, .. } => Chromosome::Real { genes, crossover_gene: Some(offspring_gene) },
        _ => return Err(Error::MissingCrossoverGene),
    };

    let f = pop.fitnesses()?;
    let mut worst = 0;
    for (i, &x) in f.iter().enumerate() {
        if x < f[worst] {
            worst = i;
        }
    }
    pop.members[worst] = Individual { chromosome: child, fitness: Some(offspring_fitness), age: 0 };
    pop.generation += 1;
    Ok(SteadyStateReport { crossed_over, parent_fitness, parent_gene: gene, offspring_fitness, offspring_gene, replaced: worst })
}

/// Runs `cfg.steps` steady-state steps, recording statistics once per
/// population's worth of offspring.
pub fn run_genitor<E, F>(
    cfg: &GenitorConfig,
    schema: &Schema,
    evaluator: &E,
    is_optimal: Option<F>,
) -> Result<(Population, Vec<GenerationStats>)>
where
    E: Evaluator + ?Sized,
    F: Fn(&Chromosome) -> bool,
{
    cfg.validate()?;
    if !matches!(schema, Schema::Neural { crossover_gene: true, .. }) {
        return Err(Error::MissingCrossoverGene);
    }
    let mut r = rng::stream(cfg.seed, &[tags::INIT]);
    let members = (0..cfg.population_size)
        .map(|_| Individual::new(schema.random(&mut r)))
        .collect();
    let mut pop = Population { members, generation: 0 };
    evaluate_population(&mut pop, evaluator, cfg.seed, tags::EVAL)?;
    let mut history = vec![GenerationStats::of(&pop, is_optimal.as_ref())?];
    let mut r = rng::stream(cfg.seed, &[tags::VARIATION]);
    for _ in 0..cfg.steps {
        steady_state_step(&mut pop, cfg, schema, evaluator, &mut r)?;
        if pop.generation as usize % cfg.population_size == 0 {
            history.push(GenerationStats::of(&pop, is_optimal.as_ref())?);
        }
    }
    Ok((pop, history))
}
