use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("policy yields no action for observation `{observation}`")]
    PolicyUndefined { observation: String },

    #[error("no rule matches observation `{observation}` and no default action is set")]
    NoMatch { observation: String },

    #[error("policy enumeration needs {count} policies, bound is {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("chromosome does not fit schema: {0}")]
    SchemaMismatch(String),

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("total fitness is zero")]
    AllZeroFitness,

    #[error("population member {0} has not been evaluated")]
    Unevaluated(usize),

    #[error("chromosome lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("chromosome has no crossover gene")]
    MissingCrossoverGene,

    #[error("episode trace has no rule firing records")]
    MissingRuleIds,

    #[error("operator preconditions not met: {0}")]
    NotTriggered(String),

    #[error("rule set is empty")]
    EmptyPolicy,

    #[error("parent has no recorded episodes")]
    NoTraces,

    #[error("value iteration did not converge within {0} sweeps")]
    NonEpisodic(usize),

    #[error("blueprint references neuron {index} but population has {len}")]
    DanglingRef { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
