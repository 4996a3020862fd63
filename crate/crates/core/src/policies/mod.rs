//! Policy representations: lookup tables, condition-action rule sets, and
//! feed-forward networks, plus their chromosome encodings.

mod chromosome;
mod neural;
mod rules;
mod tabular;

pub use chromosome::{decode, encode, Chromosome, Schema};
pub use neural::{weight_count, InputEncoding, NeuralPolicy};
pub use rules::{Condition, Rule, RuleSetPolicy, DEFAULT_STRENGTH};
pub use tabular::TabularPolicy;

use crate::envs::Observation;
use crate::error::Result;

/// Which rule produced a decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FiredRule {
    Rule(usize),
    /// The rule set's default action fired because nothing matched.
    Default,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: usize,
    pub fired: Option<FiredRule>,
}

impl Decision {
    pub fn plain(action: usize) -> Self {
        Decision { action, fired: None }
    }
}

/// Maps an observation to an action without mutating the policy.
pub trait DecisionPolicy {
    fn decide(&self, obs: &Observation) -> Result<Decision>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Tabular(TabularPolicy),
    Rules(RuleSetPolicy),
    Neural(NeuralPolicy),
}

impl DecisionPolicy for Policy {
    fn decide(&self, obs: &Observation) -> Result<Decision> {
        match self {
            Policy::Tabular(p) => p.decide(obs),
            Policy::Rules(p) => p.decide(obs),
            Policy::Neural(p) => p.decide(obs),
        }
    }
}

impl<P: DecisionPolicy + ?Sized> DecisionPolicy for &P {
    fn decide(&self, obs: &Observation) -> Result<Decision> {
        (**self).decide(obs)
    }
}
