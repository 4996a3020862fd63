use crate::envs::{Action, Observation};
use crate::error::{Error, Result};

use super::{Decision, DecisionPolicy};

/// One action gene per observation id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TabularPolicy {
    pub genes: Vec<usize>,
}

impl TabularPolicy {
    pub fn new(genes: Vec<usize>) -> Self {
        TabularPolicy { genes }
    }

    pub fn act(&self, obs: &Observation) -> usize {
        self.genes[obs.id]
    }

    /// Concatenated action labels in observation order, e.g. `RDDR...`.
    pub fn to_text(&self, actions: &[Action]) -> String {
        self.genes.iter().map(|&g| actions[g].label.as_str()).collect()
    }

    /// Inverse of [`to_text`](Self::to_text). Whitespace is ignored.
    pub fn parse(text: &str, actions: &[Action]) -> Result<Self> {
        let compact: String = text.split_whitespace().collect();
        let mut rest = compact.as_str();
        let mut genes = Vec::new();
        while !rest.is_empty() {
            let hit = actions
                .iter()
                .filter(|a| !a.label.is_empty() && rest.starts_with(a.label.as_str()))
                .max_by_key(|a| a.label.len())
                .ok_or_else(|| Error::SchemaMismatch(format!("unknown action at `{rest}`")))?;
            genes.push(hit.id);
            rest = &rest[hit.label.len()..];
        }
        Ok(TabularPolicy { genes })
    }
}

impl DecisionPolicy for TabularPolicy {
    fn decide(&self, obs: &Observation) -> Result<Decision> {
        self.genes
            .get(obs.id)
            .map(|&a| Decision::plain(a))
            .ok_or_else(|| Error::PolicyUndefined { observation: obs.label.clone() })
    }
}
