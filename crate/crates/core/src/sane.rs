//! Cooperative co-evolution of hidden neurons and the blueprints that wire
//! them into networks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::credit::{evaluate_fitness, FitnessConfig};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::evolution::tags;
use crate::policies::{InputEncoding, NeuralPolicy};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Neuron {
    /// Input weights followed by the bias.
    pub in_weights: Vec<f64>,
    /// One weight per action.
    pub out_weights: Vec<f64>,
    pub fitness: Option<f64>,
    /// Fitnesses of this generation's networks that used the neuron.
    pub participation: Vec<f64>,
}

impl Neuron {
    pub fn new(in_weights: Vec<f64>, out_weights: Vec<f64>) -> Self {
        Neuron { in_weights, out_weights, fitness: None, participation: Vec::new() }
    }

    fn genes(&self) -> Vec<f64> {
        self.in_weights.iter().chain(&self.out_weights).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blueprint {
    pub neuron_refs: Vec<usize>,
    pub fitness: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaneConfig {
    pub neuron_pop_size: usize,
    pub blueprint_pop_size: usize,
    pub hidden_size: usize,
    pub elite_fraction: f64,
    pub top_participation: usize,
    /// Per-weight Gaussian mutation probability for neurons.
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    /// Per-pointer probability that a blueprint reference is redrawn.
    pub ref_mutation_rate: f64,
    pub generations: u32,
    pub seed: u64,
    pub fitness: FitnessConfig,
}

impl Default for SaneConfig {
    fn default() -> Self {
        SaneConfig {
            neuron_pop_size: 50,
            blueprint_pop_size: 20,
            hidden_size: 4,
            elite_fraction: 0.25,
            top_participation: 5,
            mutation_rate: 0.1,
            mutation_sigma: 0.3,
            ref_mutation_rate: 0.05,
            generations: 100,
            seed: 0,
            fitness: FitnessConfig::default(),
        }
    }
}

impl SaneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.hidden_size == 0 || self.hidden_size > self.neuron_pop_size {
            return bad("hidden_size must be in 1..=neuron_pop_size");
        }
        if self.blueprint_pop_size == 0 {
            return bad("blueprint_pop_size must be at least 1");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return bad("elite_fraction must be in (0, 1)");
        }
        if self.top_participation == 0 {
            return bad("top_participation must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.ref_mutation_rate) {
            return bad("mutation rates must be in [0, 1]");
        }
        if !(self.mutation_sigma >= 0.0 && self.mutation_sigma.is_finite()) {
            return bad("mutation_sigma must be finite and non-negative");
        }
        self.fitness.validate()
    }

    fn elites(n: usize, fraction: f64) -> usize {
        ((n as f64 * fraction).ceil() as usize).clamp(1, n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanePopulations {
    pub neurons: Vec<Neuron>,
    pub blueprints: Vec<Blueprint>,
    pub generation: u32,
}

/// Uniform(-1, 1) weights and uniformly drawn references.
pub fn initial_populations<R: Rng + ?Sized>(
    encoding: &InputEncoding,
    num_actions: usize,
    cfg: &SaneConfig,
    rng: &mut R,
) -> Result<SanePopulations> {
    cfg.validate()?;
    let n_in = encoding.num_inputs() + 1;
    let neurons = (0..cfg.neuron_pop_size)
        .map(|_| {
            Neuron::new(
                (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..num_actions).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let blueprints = (0..cfg.blueprint_pop_size)
        .map(|_| Blueprint {
            neuron_refs: (0..cfg.hidden_size).map(|_| rng.random_range(0..cfg.neuron_pop_size)).collect(),
            fitness: None,
        })
        .collect();
    Ok(SanePopulations { neurons, blueprints, generation: 0 })
}

/// Builds the network a blueprint describes. Each referenced neuron is one
/// hidden unit; its output weights feed the action units, whose biases are 0.
pub fn assemble_network(
    bp: &Blueprint,
    neurons: &[Neuron],
    encoding: &InputEncoding,
    num_actions: usize,
) -> Result<NeuralPolicy> {
    if let Some(&bad) = bp.neuron_refs.iter().find(|&&r| r >= neurons.len()) {
        return Err(Error::DanglingRef { index: bad, len: neurons.len() });
    }
    let hidden: Vec<&Neuron> = bp.neuron_refs.iter().map(|&r| &neurons[r]).collect();
    let mut weights = Vec::new();
    for n in &hidden {
        weights.extend_from_slice(&n.in_weights);
    }
    for a in 0..num_actions {
        for n in &hidden {
            weights.push(*n.out_weights.get(a).ok_or(Error::LengthMismatch {
                left: n.out_weights.len(),
                right: num_actions,
            })?);
        }
        weights.push(0.0);
    }
    NeuralPolicy::new(encoding.clone(), hidden.len(), num_actions, weights, None)
}

/// Scores every blueprint's network and credits neurons with the mean of
/// their best `top_participation` network fitnesses. Neurons used by no
/// network get the generation's minimum.
pub fn evaluate_sane(pops: &mut SanePopulations, env: &Environment, encoding: &InputEncoding, cfg: &SaneConfig) -> Result<()> {
    let generation = pops.generation as u64;
    let neurons = &pops.neurons;
    let scores: Vec<f64> = pops
        .blueprints
        .par_iter()
        .enumerate()
        .map(|(i, bp)| {
            let net = assemble_network(bp, neurons, encoding, env.num_actions())?;
            let mut r = rng::stream(cfg.seed, &[tags::EVAL, generation, i as u64]);
            evaluate_fitness(env, &net, &cfg.fitness, &mut r)
        })
        .collect::<Result<_>>()?;
    for n in &mut pops.neurons {
        n.participation.clear();
        n.fitness = None;
    }
    for (bp, &f) in pops.blueprints.iter_mut().zip(&scores) {
        bp.fitness = Some(f);
        let mut refs = bp.neuron_refs.clone();
        refs.sort_unstable();
        refs.dedup();
        for r in refs {
            pops.neurons[r].participation.push(f);
        }
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    for n in &mut pops.neurons {
        if n.participation.is_empty() {
            n.fitness = Some(min);
        } else {
            let mut p = n.participation.clone();
            p.sort_by(|a, b| b.total_cmp(a));
            let k = cfg.top_participation.min(p.len());
            n.fitness = Some(p[..k].iter().sum::<f64>() / k as f64);
        }
    }
    Ok(())
}

fn ranking(fitness: impl Iterator<Item = Option<f64>>) -> Result<Vec<usize>> {
    let f: Vec<f64> = fitness
        .enumerate()
        .map(|(i, f)| f.ok_or(Error::Unevaluated(i)))
        .collect::<Result<_>>()?;
    let mut idx: Vec<usize> = (0..f.len()).collect();
    idx.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    Ok(idx)
}

/// Keeps the elite of each population and overwrites the rest in place
/// with mutated one-point-crossover children of two random elites, so
/// neuron indices stay meaningful for surviving blueprints. All fitnesses
/// are cleared.
pub fn breed_sane<R: Rng + ?Sized>(pops: &mut SanePopulations, cfg: &SaneConfig, rng: &mut R) -> Result<()> {
    let normal = Normal::new(0.0, cfg.mutation_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let order = ranking(pops.neurons.iter().map(|n| n.fitness))?;
    let n_elite = SaneConfig::elites(order.len(), cfg.elite_fraction);
    let (elite, rest) = order.split_at(n_elite);
    let n_in = pops.neurons[0].in_weights.len();
    for &slot in rest {
        let a = pops.neurons[elite[rng.random_range(0..elite.len())]].genes();
        let b = pops.neurons[elite[rng.random_range(0..elite.len())]].genes();
        let cut = rng.random_range(1..a.len().max(2));
        let mut child: Vec<f64> = a[..cut.min(a.len())].iter().chain(&b[cut.min(b.len())..]).copied().collect();
        for g in &mut child {
            if rng.random_bool(cfg.mutation_rate) {
                *g += normal.sample(rng);
            }
        }
        let out = child.split_off(n_in);
        pops.neurons[slot] = Neuron::new(child, out);
    }

    let order = ranking(pops.blueprints.iter().map(|b| b.fitness))?;
    let n_elite = SaneConfig::elites(order.len(), cfg.elite_fraction);
    let (elite, rest) = order.split_at(n_elite);
    let n = pops.neurons.len();
    for &slot in rest {
        let a = &pops.blueprints[elite[rng.random_range(0..elite.len())]].neuron_refs;
        let b = &pops.blueprints[elite[rng.random_range(0..elite.len())]].neuron_refs;
        let cut = if a.len() < 2 { 0 } else { rng.random_range(1..a.len()) };
        let mut refs: Vec<usize> = a[..cut].iter().chain(&b[cut..]).copied().collect();
        for r in &mut refs {
            if rng.random_bool(cfg.ref_mutation_rate) {
                *r = rng.random_range(0..n);
            }
        }
        pops.blueprints[slot] = Blueprint { neuron_refs: refs, fitness: None };
    }

    for bp in &mut pops.blueprints {
        bp.fitness = None;
    }
    for neuron in &mut pops.neurons {
        neuron.fitness = None;
        neuron.participation.clear();
    }
    pops.generation += 1;
    Ok(())
}

/// Mean Euclidean distance between all pairs of neurons' weight vectors.
pub fn neuron_diversity(neurons: &[Neuron]) -> f64 {
    let genes: Vec<Vec<f64>> = neurons.iter().map(Neuron::genes).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..genes.len() {
        for j in i + 1..genes.len() {
            total += genes[i].iter().zip(&genes[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaneStats {
    pub generation: u32,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub diversity: f64,
}

impl SaneStats {
    pub const CSV_HEADER: &'static str = "generation,best_fitness,mean_fitness,fraction_optimal,diversity";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},,{}", self.generation, self.best_fitness, self.mean_fitness, self.diversity)
    }
}

/// Evaluate, record statistics, breed.
pub fn sane_generation<R: Rng + ?Sized>(
    pops: &mut SanePopulations,
    env: &Environment,
    encoding: &InputEncoding,
    cfg: &SaneConfig,
    rng: &mut R,
) -> Result<(SaneStats, NeuralPolicy)> {
    evaluate_sane(pops, env, encoding, cfg)?;
    let order = ranking(pops.blueprints.iter().map(|b| b.fitness))?;
    let f: Vec<f64> = pops.blueprints.iter().map(|b| b.fitness.unwrap_or(f64::NAN)).collect();
    let stats = SaneStats {
        generation: pops.generation,
        best_fitness: f[order[0]],
        mean_fitness: f.iter().sum::<f64>() / f.len() as f64,
        diversity: neuron_diversity(&pops.neurons),
    };
    let best = assemble_network(&pops.blueprints[order[0]], &pops.neurons, encoding, env.num_actions())?;
    breed_sane(pops, cfg, rng)?;
    Ok((stats, best))
}

pub struct SaneRun {
    pub populations: SanePopulations,
    pub history: Vec<SaneStats>,
    /// Best network seen in any generation, with its fitness.
    pub best: (NeuralPolicy, f64),
}

pub fn run_sane(env: &Environment, encoding: &InputEncoding, cfg: &SaneConfig) -> Result<SaneRun> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, &[tags::INIT]);
    let mut pops = initial_populations(encoding, env.num_actions(), cfg, &mut r)?;
    let mut r = rng::stream(cfg.seed, &[tags::VARIATION]);
    let mut history = Vec::new();
    let mut best: Option<(NeuralPolicy, f64)> = None;
    for _ in 0..cfg.generations.max(1) {
        let (stats, net) = sane_generation(&mut pops, env, encoding, cfg, &mut r)?;
        if best.as_ref().is_none_or(|b| stats.best_fitness > b.1) {
            best = Some((net, stats.best_fitness));
        }
        history.push(stats);
    }
    Ok(SaneRun { populations: pops, history, best: best.expect("at least one generation") })
}
