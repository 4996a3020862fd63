use std::fmt::Write as _;

use crate::envs::{Action, Observation, Sensor};
use crate::error::{Error, Result};

use super::{Decision, DecisionPolicy, FiredRule};

pub const DEFAULT_STRENGTH: f64 = 0.5;

/// Predicate over one integer sensor reading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    /// `#`: matches anything.
    Any,
    Exact(i64),
    /// Closed interval `[lo, hi]`.
    Range { lo: i64, hi: i64 },
}

impl Condition {
    pub fn range(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidRule(format!("interval [{lo}, {hi}] is empty")));
        }
        Ok(Condition::Range { lo, hi })
    }

    pub fn matches(&self, v: i64) -> bool {
        match *self {
            Condition::Any => true,
            Condition::Exact(x) => x == v,
            Condition::Range { lo, hi } => lo <= v && v <= hi,
        }
    }

    /// Smallest widening of `self` that also matches `v`.
    pub fn widened_to(&self, v: i64) -> Condition {
        match *self {
            Condition::Any => Condition::Any,
            Condition::Exact(x) if x == v => *self,
            Condition::Exact(x) => Condition::Range { lo: x.min(v), hi: x.max(v) },
            Condition::Range { lo, hi } => Condition::Range { lo: lo.min(v), hi: hi.max(v) },
        }
    }

    pub fn format(&self, sensor: &Sensor) -> String {
        match *self {
            Condition::Any => "#".into(),
            Condition::Exact(x) => sensor.format_value(x),
            Condition::Range { lo, hi } => {
                format!("[{},{}]", sensor.format_value(lo), sensor.format_value(hi))
            }
        }
    }

    pub fn parse(token: &str, sensor: &Sensor) -> Result<Self> {
        let bad = || Error::InvalidRule(format!("bad condition `{token}` for sensor `{}`", sensor.name));
        if token == "#" {
            return Ok(Condition::Any);
        }
        if let Some(inner) = token.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            let lo = sensor.parse_value(lo.trim()).ok_or_else(bad)?;
            let hi = sensor.parse_value(hi.trim()).ok_or_else(bad)?;
            return Condition::range(lo, hi);
        }
        sensor.parse_value(token).map(Condition::Exact).ok_or_else(bad)
    }
}

/// A condition-action rule with a strength used for conflict resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub action: usize,
    pub strength: f64,
}

impl Rule {
    pub fn new(conditions: Vec<Condition>, action: usize, strength: f64) -> Result<Self> {
        let rule = Rule { conditions, action, strength };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::InvalidRule(format!("strength {} is not a finite non-negative number", self.strength)));
        }
        for c in &self.conditions {
            if let Condition::Range { lo, hi } = *c {
                if lo > hi {
                    return Err(Error::InvalidRule(format!("interval [{lo}, {hi}] is empty")));
                }
            }
        }
        Ok(())
    }

    pub fn matches(&self, sensors: &[i64]) -> bool {
        self.conditions.len() == sensors.len()
            && self.conditions.iter().zip(sensors).all(|(c, &v)| c.matches(v))
    }

    /// `cond cond -> ACTION @ strength`
    pub fn to_text(&self, sensors: &[Sensor], actions: &[Action]) -> String {
        let mut out = String::new();
        for (c, s) in self.conditions.iter().zip(sensors) {
            let _ = write!(out, "{} ", c.format(s));
        }
        let _ = write!(out, "-> {} @ {}", actions[self.action].label, self.strength);
        out
    }

    pub fn parse(line: &str, sensors: &[Sensor], actions: &[Action]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidRule(format!("{m} in `{line}`"));
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| bad("missing `->`"))?;
        let tokens: Vec<&str> = lhs.split_whitespace().collect();
        if tokens.len() != sensors.len() {
            return Err(bad("wrong number of conditions"));
        }
        let conditions = tokens
            .iter()
            .zip(sensors)
            .map(|(t, s)| Condition::parse(t, s))
            .collect::<Result<Vec<_>>>()?;
        let (act, strength) = rhs.split_once('@').ok_or_else(|| bad("missing `@`"))?;
        let action = actions
            .iter()
            .position(|a| a.label == act.trim())
            .ok_or_else(|| bad("unknown action"))?;
        let strength = strength.trim().parse().map_err(|_| bad("bad strength"))?;
        Rule::new(conditions, action, strength)
    }
}

/// Ordered rule list; a rule's index is its id in episode traces.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleSetPolicy {
    pub rules: Vec<Rule>,
    pub default_action: Option<usize>,
}

impl RuleSetPolicy {
    pub fn new(rules: Vec<Rule>, default_action: Option<usize>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::EmptyPolicy);
        }
        for r in &rules {
            r.validate()?;
        }
        Ok(RuleSetPolicy { rules, default_action })
    }

    /// Index of the strongest matching rule; ties go to the lowest index.
    pub fn matching_rule(&self, sensors: &[i64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rules.iter().enumerate() {
            if r.matches(sensors) && best.is_none_or(|b| r.strength > self.rules[b].strength) {
                best = Some(i);
            }
        }
        best
    }

    pub fn act(&self, obs: &Observation) -> Result<(usize, FiredRule)> {
        match self.matching_rule(&obs.sensors) {
            Some(i) => Ok((self.rules[i].action, FiredRule::Rule(i))),
            None => self
                .default_action
                .map(|a| (a, FiredRule::Default))
                .ok_or_else(|| Error::NoMatch { observation: obs.label.clone() }),
        }
    }

    pub fn to_text(&self, sensors: &[Sensor], actions: &[Action]) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&r.to_text(sensors, actions));
            out.push('\n');
        }
        out
    }
}

impl DecisionPolicy for RuleSetPolicy {
    fn decide(&self, obs: &Observation) -> Result<Decision> {
        let (action, fired) = self.act(obs)?;
        Ok(Decision { action, fired: Some(fired) })
    }
}
