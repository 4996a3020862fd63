//! Credit assignment: whole-policy fitness, rule strength updates (profit
//! sharing and bucket brigade), and the value function implicit in a
//! population of tabular policies.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::envs::{run_episode, Environment, EpisodeTrace, PayoffRange, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::evolution::Population;
use crate::policies::{Chromosome, DecisionPolicy, FiredRule, RuleSetPolicy};

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_BID_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    UndiscountedSum,
    DiscountedSum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitnessConfig {
    /// Sampled trials when the expectation is not computed exactly.
    pub trials: usize,
    pub horizon: usize,
    pub discount: f64,
    pub aggregation: Aggregation,
    /// Enumerate the start distribution instead of sampling it.
    pub exact_expectation: bool,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig {
            trials: 1,
            horizon: DEFAULT_MAX_STEPS,
            discount: 1.0,
            aggregation: Aggregation::UndiscountedSum,
            exact_expectation: true,
        }
    }
}

impl FitnessConfig {
    pub fn discounted(discount: f64) -> Self {
        FitnessConfig { discount, aggregation: Aggregation::DiscountedSum, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("trials and horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig(format!("discount {} outside [0, 1]", self.discount)));
        }
        if self.aggregation == Aggregation::UndiscountedSum && self.discount != 1.0 {
            return Err(Error::InvalidConfig("undiscounted aggregation requires discount 1".into()));
        }
        Ok(())
    }

    pub fn aggregate(&self, trace: &EpisodeTrace) -> f64 {
        match self.aggregation {
            Aggregation::UndiscountedSum => trace.total_return,
            Aggregation::DiscountedSum => {
                let mut weight = 1.0;
                let mut total = 0.0;
                for r in trace.rewards() {
                    total += weight * r;
                    weight *= self.discount;
                }
                total
            }
        }
    }
}

/// Fitness of a whole policy: its (expected) aggregated episode return.
pub fn evaluate_fitness<P, R>(env: &Environment, policy: &P, cfg: &FitnessConfig, rng: &mut R) -> Result<f64>
where
    P: DecisionPolicy + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    let starts = env.start_states();
    if cfg.exact_expectation || starts.len() == 1 {
        return starts.iter().try_fold(0.0, |acc, &(s, p)| {
            Ok(acc + p * cfg.aggregate(&run_episode(env, policy, s, cfg.horizon)?))
        });
    }
    let mut total = 0.0;
    for _ in 0..cfg.trials {
        let s = env.sample_start(rng);
        total += cfg.aggregate(&run_episode(env, policy, s, cfg.horizon)?);
    }
    Ok(total / cfg.trials as f64)
}

/// SAMUEL-style end-of-trial update: every rule that fired moves toward the
/// normalized payoff, `s += beta * (p - s)`. Unfired rules are untouched.
pub fn profit_sharing_update(
    policy: &mut RuleSetPolicy,
    fired: &[usize],
    payoff: f64,
    range: PayoffRange,
    beta: f64,
) -> Result<()> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidConfig(format!("beta {beta} outside (0, 1]")));
    }
    let p = range.normalize(payoff);
    let unique: BTreeSet<usize> = fired.iter().copied().collect();
    for i in unique {
        let rule = policy
            .rules
            .get_mut(i)
            .ok_or_else(|| Error::InvalidConfig(format!("rule {i} out of range")))?;
        rule.strength += beta * (p - rule.strength);
    }
    Ok(())
}

/// Rule indices that fired in `trace`, skipping default-action steps.
pub fn fired_rule_indices(trace: &EpisodeTrace) -> Result<Vec<usize>> {
    let fired = trace.fired_rules().ok_or(Error::MissingRuleIds)?;
    Ok(fired
        .into_iter()
        .filter_map(|f| match f {
            FiredRule::Rule(i) => Some(i),
            FiredRule::Default => None,
        })
        .collect())
}

/// Passes bids backward along the firing chain: each rule pays
/// `bid_fraction` of its strength to the rule that fired just before it.
/// The last rule to fire is also paid the normalized environment payoff.
pub fn bucket_brigade_update(
    trace: &EpisodeTrace,
    policy: &mut RuleSetPolicy,
    bid_fraction: f64,
    final_payoff: f64,
    range: PayoffRange,
) -> Result<()> {
    if !(bid_fraction > 0.0 && bid_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("bid fraction {bid_fraction} outside (0, 1)")));
    }
    let chain = fired_rule_indices(trace)?;
    if let Some(&bad) = chain.iter().find(|&&i| i >= policy.rules.len()) {
        return Err(Error::InvalidConfig(format!("trace names rule {bad}, policy has {}", policy.rules.len())));
    }
    for pair in chain.windows(2) {
        let (prev, cur) = (pair[0], pair[1]);
        let bid = bid_fraction * policy.rules[cur].strength;
        policy.rules[cur].strength -= bid;
        policy.rules[prev].strength += bid;
    }
    if let Some(&last) = chain.last() {
        policy.rules[last].strength += range.normalize(final_payoff);
    }
    Ok(())
}

/// Mean fitness of population members choosing each (observation, action).
#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitValueTable {
    /// `entries[observation][action]`; `None` when no member makes that choice.
    pub entries: Vec<Vec<Option<f64>>>,
}

impl ImplicitValueTable {
    pub fn get(&self, obs: usize, action: usize) -> Option<f64> {
        self.entries[obs][action]
    }

    /// Rows are actions, columns observations; absent entries print as `?`.
    pub fn to_csv(&self, observation_labels: &[&str], action_labels: &[&str]) -> String {
        let mut out = String::from("action");
        for l in observation_labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (a, label) in action_labels.iter().enumerate() {
            out.push_str(label);
            for row in &self.entries {
                match row[a] {
                    Some(v) => {
                        let _ = write!(out, ",{v:.2}");
                    }
                    None => out.push_str(",?"),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn implicit_value_estimate(pop: &Population, num_observations: usize, num_actions: usize) -> Result<ImplicitValueTable> {
    let mut sums = vec![vec![(0.0, 0usize); num_actions]; num_observations];
    for (i, ind) in pop.members.iter().enumerate() {
        let fitness = ind.fitness.ok_or(Error::Unevaluated(i))?;
        let genes = match &ind.chromosome {
            Chromosome::Discrete(g) if g.len() == num_observations => g,
            _ => return Err(Error::SchemaMismatch("implicit values need tabular chromosomes".into())),
        };
        for (o, &a) in genes.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::SchemaMismatch(format!("gene {a} is not an action id")));
            }
            sums[o][a].0 += fitness;
            sums[o][a].1 += 1;
        }
    }
    let entries = sums
        .into_iter()
        .map(|row| row.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
        .collect();
    Ok(ImplicitValueTable { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_grid_world, make_hidden_state_world, Step};
    use crate::policies::{Condition, Rule, TabularPolicy};
    use rand::SeedableRng;

    fn rules(strengths: &[f64]) -> RuleSetPolicy {
        RuleSetPolicy::new(
            strengths
                .iter()
                .map(|&s| Rule::new(vec![Condition::Any], 0, s).unwrap())
                .collect(),
            None,
        )
        .unwrap()
    }

    fn trace_of(fired: &[usize]) -> EpisodeTrace {
        EpisodeTrace {
            start: 0,
            steps: fired
                .iter()
                .map(|&i| Step { observation: 0, action: 0, reward: 0.0, fired: Some(FiredRule::Rule(i)) })
                .collect(),
            total_return: 0.0,
            terminated: true,
        }
    }

    #[test]
    fn reference_grid_policy_fitnesses() {
        let env = make_grid_world();
        let cfg = FitnessConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for (genes, f) in [
            ("DRDDRRRRRRDRDDRRDRRRDRRDR", 8.0),
            ("DDDDRRRRRRDDRRDRDRRRDRDDR", 9.0),
            ("RDDRRDRDRRDDDRDRDRRRDRDDD", 17.0),
            ("RDDDRDRRDRRDRRDRDRRDDRDDD", 16.0),
        ] {
            let p = TabularPolicy::parse(genes, env.actions()).unwrap();
            assert_eq!(evaluate_fitness(&env, &p, &cfg, &mut rng).unwrap(), f);
        }
    }

    #[test]
    fn discount_zero_keeps_first_reward() {
        let env = make_hidden_state_world();
        let p = TabularPolicy::parse("RRL", env.actions()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let f = evaluate_fitness(&env, &p, &FitnessConfig::discounted(0.0), &mut rng).unwrap();
        // first step pays r(start) = 0, plus 0.75 when green exits immediately
        assert_eq!(f, 0.5 * 0.75);
        let grid = make_grid_world();
        let p = TabularPolicy::parse(&"D".repeat(25), grid.actions()).unwrap();
        let f = evaluate_fitness(&grid, &p, &FitnessConfig::discounted(0.0), &mut rng).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn sampled_fitness_approaches_expectation() {
        let env = make_hidden_state_world();
        let p = TabularPolicy::parse("RRL", env.actions()).unwrap();
        let cfg = FitnessConfig { trials: 4000, exact_expectation: false, ..Default::default() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let f = evaluate_fitness(&env, &p, &cfg, &mut rng).unwrap();
        // each trial is 3.0 or 0.75: sd 1.125, 4000 trials -> se ~0.018
        assert!((f - 1.875).abs() < 0.08, "{f}");
    }

    #[test]
    fn undiscounted_needs_unit_discount() {
        let cfg = FitnessConfig { discount: 0.9, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn profit_sharing_fixed_point_and_full_replacement() {
        let range = PayoffRange::new(0.0, 1.0);
        let mut p = rules(&[0.3, 0.9]);
        profit_sharing_update(&mut p, &[0], 0.8, range, 1.0).unwrap();
        assert_eq!(p.rules[0].strength, 0.8);
        assert_eq!(p.rules[1].strength, 0.9);
        profit_sharing_update(&mut p, &[1, 1], 0.9, range, 0.2).unwrap();
        assert_eq!(p.rules[1].strength, 0.9);
    }

    #[test]
    fn profit_sharing_converges_geometrically() {
        let range = PayoffRange::new(-4.0, 3.0);
        let (s0, beta, payoff) = (0.1, 0.2, 3.0);
        let target = range.normalize(payoff);
        let mut p = rules(&[s0]);
        for k in 1..=30 {
            profit_sharing_update(&mut p, &[0], payoff, range, beta).unwrap();
            let closed = target + (s0 - target) * (1.0 - beta).powi(k);
            assert!((p.rules[0].strength - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn bucket_brigade_two_rule_chain() {
        let range = PayoffRange::new(0.0, 10.0);
        let mut p = rules(&[0.5, 0.5]);
        bucket_brigade_update(&trace_of(&[0, 1]), &mut p, 0.1, 3.0, range).unwrap();
        assert!((p.rules[0].strength - 0.55).abs() < 1e-15);
        assert!((p.rules[1].strength - (0.45 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn bucket_brigade_single_rule_gets_only_payoff() {
        let range = PayoffRange::new(0.0, 10.0);
        let mut p = rules(&[0.5, 0.2]);
        bucket_brigade_update(&trace_of(&[1]), &mut p, 0.1, 5.0, range).unwrap();
        assert_eq!(p.rules[0].strength, 0.5);
        assert_eq!(p.rules[1].strength, 0.7);
    }

    #[test]
    fn bucket_brigade_needs_firing_records() {
        let mut t = trace_of(&[0]);
        t.steps[0].fired = None;
        let mut p = rules(&[0.5]);
        let r = bucket_brigade_update(&t, &mut p, 0.1, 1.0, PayoffRange::new(0.0, 1.0));
        assert_eq!(r, Err(Error::MissingRuleIds));
    }
}
