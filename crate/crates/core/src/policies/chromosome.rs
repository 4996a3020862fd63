use rand::Rng;

use crate::envs::Environment;
use crate::error::{Error, Result};

use super::neural::weight_count;
use super::{Condition, InputEncoding, NeuralPolicy, Policy, Rule, RuleSetPolicy, TabularPolicy, DEFAULT_STRENGTH};

/// Genetic encoding of a policy.
#[derive(Clone, Debug, PartialEq)]
pub enum Chromosome {
    /// Discrete symbols (tabular action genes).
    Discrete(Vec<usize>),
    /// Real-valued genes (network weights) plus an optional crossover-rate gene.
    Real { genes: Vec<f64>, crossover_gene: Option<f64> },
    /// One gene per rule.
    Rules(Vec<Rule>),
}

impl Chromosome {
    pub fn len(&self) -> usize {
        match self {
            Chromosome::Discrete(g) => g.len(),
            Chromosome::Real { genes, .. } => genes.len(),
            Chromosome::Rules(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn crossover_gene(&self) -> Option<f64> {
        match self {
            Chromosome::Real { crossover_gene, .. } => *crossover_gene,
            _ => None,
        }
    }

    pub fn as_discrete(&self) -> Option<&[usize]> {
        match self {
            Chromosome::Discrete(g) => Some(g),
            _ => None,
        }
    }
}

/// Representation kind and dimensions needed to build and decode chromosomes.
#[derive(Clone, Debug, PartialEq)]
pub enum Schema {
    Tabular {
        num_observations: usize,
        num_actions: usize,
    },
    Rules {
        sensor_bounds: Vec<(i64, i64)>,
        num_actions: usize,
        /// Rule count of freshly generated rule sets.
        num_rules: usize,
        default_action: Option<usize>,
    },
    Neural {
        encoding: InputEncoding,
        hidden_size: usize,
        num_actions: usize,
        crossover_gene: bool,
    },
}

impl Schema {
    pub fn tabular(env: &Environment) -> Self {
        Schema::Tabular { num_observations: env.num_observations(), num_actions: env.num_actions() }
    }

    pub fn rules(env: &Environment, num_rules: usize, default_action: Option<usize>) -> Self {
        Schema::Rules {
            sensor_bounds: env.sensor_bounds(),
            num_actions: env.num_actions(),
            num_rules,
            default_action,
        }
    }

    pub fn neural(encoding: InputEncoding, hidden_size: usize, num_actions: usize, crossover_gene: bool) -> Self {
        Schema::Neural { encoding, hidden_size, num_actions, crossover_gene }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Schema::Tabular { num_actions, .. }
            | Schema::Rules { num_actions, .. }
            | Schema::Neural { num_actions, .. } => *num_actions,
        }
    }

    /// A uniformly random chromosome for this schema.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Chromosome {
        match self {
            Schema::Tabular { num_observations, num_actions } => {
                Chromosome::Discrete((0..*num_observations).map(|_| rng.random_range(0..*num_actions)).collect())
            }
            Schema::Rules { sensor_bounds, num_actions, num_rules, .. } => Chromosome::Rules(
                (0..(*num_rules).max(1))
                    .map(|_| random_rule(sensor_bounds, *num_actions, rng))
                    .collect(),
            ),
            Schema::Neural { encoding, hidden_size, num_actions, crossover_gene } => {
                let n = weight_count(encoding.num_inputs(), *hidden_size, *num_actions);
                Chromosome::Real {
                    genes: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    crossover_gene: crossover_gene.then(|| rng.random_range(0.05..=0.95)),
                }
            }
        }
    }
}

pub(crate) fn random_condition<R: Rng + ?Sized>((lo, hi): (i64, i64), rng: &mut R) -> Condition {
    match rng.random_range(0..3) {
        0 => Condition::Any,
        1 => Condition::Exact(rng.random_range(lo..=hi)),
        _ => {
            let a = rng.random_range(lo..=hi);
            let b = rng.random_range(lo..=hi);
            Condition::Range { lo: a.min(b), hi: a.max(b) }
        }
    }
}

fn random_rule<R: Rng + ?Sized>(bounds: &[(i64, i64)], num_actions: usize, rng: &mut R) -> Rule {
    Rule {
        conditions: bounds.iter().map(|&b| random_condition(b, rng)).collect(),
        action: rng.random_range(0..num_actions),
        strength: DEFAULT_STRENGTH,
    }
}

pub fn encode(policy: &Policy) -> Chromosome {
    match policy {
        Policy::Tabular(p) => Chromosome::Discrete(p.genes.clone()),
        Policy::Rules(p) => Chromosome::Rules(p.rules.clone()),
        Policy::Neural(p) => Chromosome::Real { genes: p.weights.clone(), crossover_gene: p.crossover_gene },
    }
}

pub fn decode(chromosome: &Chromosome, schema: &Schema) -> Result<Policy> {
    let mismatch = |m: String| Err(Error::SchemaMismatch(m));
    match (chromosome, schema) {
        (Chromosome::Discrete(genes), Schema::Tabular { num_observations, num_actions }) => {
            if genes.len() != *num_observations {
                return mismatch(format!("{} genes for {num_observations} observations", genes.len()));
            }
            if let Some(g) = genes.iter().find(|&&g| g >= *num_actions) {
                return mismatch(format!("gene {g} is not an action id"));
            }
            Ok(Policy::Tabular(TabularPolicy::new(genes.clone())))
        }
        (Chromosome::Rules(rules), Schema::Rules { sensor_bounds, num_actions, default_action, .. }) => {
            for r in rules {
                if r.conditions.len() != sensor_bounds.len() {
                    return mismatch(format!("rule has {} conditions for {} sensors", r.conditions.len(), sensor_bounds.len()));
                }
                if r.action >= *num_actions {
                    return mismatch(format!("rule action {} is not an action id", r.action));
                }
            }
            RuleSetPolicy::new(rules.clone(), *default_action).map(Policy::Rules)
        }
        (
            Chromosome::Real { genes, crossover_gene },
            Schema::Neural { encoding, hidden_size, num_actions, crossover_gene: wants_gene },
        ) => {
            if crossover_gene.is_some() != *wants_gene {
                return mismatch("crossover gene presence differs from schema".into());
            }
            NeuralPolicy::new(encoding.clone(), *hidden_size, *num_actions, genes.clone(), *crossover_gene)
                .map(Policy::Neural)
        }
        _ => mismatch("chromosome kind differs from schema kind".into()),
    }
}
