//! Experience-triggered operators for rule-set policies: specialization,
//! covering and clustered crossover, plus an EA loop that applies them.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::credit::{fired_rule_indices, profit_sharing_update, DEFAULT_BETA};
use crate::envs::{run_episode, Environment, EpisodeTrace, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::evolution::{mutate, tags, EaConfig, GenerationStats, Selection};
use crate::policies::{Chromosome, Condition, Rule, RuleSetPolicy, Schema};
use crate::rng;

pub const DEFAULT_CAPACITY: usize = 32;
/// Rules weaker than this are candidates for specialization.
pub const LOW_STRENGTH: f64 = 0.3;
pub const HIGH_PAYOFF_QUANTILE: f64 = 0.75;

/// How an episode is judged high-payoff.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HighPayoff {
    /// At or above this quantile of the payoffs currently in the buffer.
    Quantile(f64),
    Threshold(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecordedEpisode {
    pub trace: EpisodeTrace,
    pub payoff: f64,
    pub high_payoff: bool,
}

/// Bounded FIFO record of an agent's recent episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceBuffer {
    capacity: usize,
    criterion: HighPayoff,
    episodes: VecDeque<RecordedEpisode>,
}

impl Default for ExperienceBuffer {
    fn default() -> Self {
        ExperienceBuffer::new(DEFAULT_CAPACITY, HighPayoff::Quantile(HIGH_PAYOFF_QUANTILE))
    }
}

/// Linear-interpolation quantile of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, criterion: HighPayoff) -> Self {
        ExperienceBuffer { capacity: capacity.max(1), criterion, episodes: VecDeque::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &RecordedEpisode> {
        self.episodes.iter()
    }

    pub fn threshold(&self) -> Option<f64> {
        match self.criterion {
            HighPayoff::Threshold(t) => Some(t),
            HighPayoff::Quantile(q) => {
                let payoffs: Vec<f64> = self.episodes.iter().map(|e| e.payoff).collect();
                (!payoffs.is_empty()).then(|| quantile(&payoffs, q))
            }
        }
    }

    /// Appends an episode, evicting the oldest when full, and re-labels
    /// every episode against the current threshold.
    pub fn push(&mut self, trace: EpisodeTrace, payoff: f64) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(RecordedEpisode { trace, payoff, high_payoff: false });
        let t = self.threshold().unwrap_or(f64::NEG_INFINITY);
        for e in &mut self.episodes {
            e.high_payoff = e.payoff >= t;
        }
    }
}

fn narrow(lo: i64, hi: i64, reading: i64) -> Condition {
    let quarter = (hi - lo) as f64 / 4.0;
    let a = ((reading as f64 - quarter).ceil() as i64).max(lo);
    let b = ((reading as f64 + quarter).floor() as i64).min(hi);
    Condition::Range { lo: a, hi: b }
}

/// Narrows a weak rule that fired in a high-payoff episode around the
/// sensor reading it fired on. Intervals keep half their width, centred on
/// the reading and rounded inward; `#` becomes half the sensor range; exact
/// values stay. The result is as strong as the normalized payoff.
pub fn specialize(
    rule: &Rule,
    reading: &[i64],
    sensor_bounds: &[(i64, i64)],
    payoff_normalized: f64,
    high_payoff: bool,
    low_strength: f64,
) -> Result<Rule> {
    if reading.len() != rule.conditions.len() || sensor_bounds.len() != rule.conditions.len() {
        return Err(Error::LengthMismatch { left: rule.conditions.len(), right: reading.len() });
    }
    if !high_payoff {
        return Err(Error::NotTriggered("episode payoff is not high".into()));
    }
    if rule.strength >= low_strength {
        return Err(Error::NotTriggered(format!("strength {} is not below {low_strength}", rule.strength)));
    }
    if !rule.matches(reading) {
        return Err(Error::NotTriggered("rule does not match the reading".into()));
    }
    let conditions = rule
        .conditions
        .iter()
        .zip(reading)
        .zip(sensor_bounds)
        .map(|((c, &r), &(lo_b, hi_b))| match *c {
            Condition::Any => narrow(lo_b, hi_b, r),
            Condition::Exact(_) => *c,
            Condition::Range { lo, hi } => narrow(lo.max(lo_b), hi.min(hi_b), r),
        })
        .collect();
    Ok(Rule { conditions, action: rule.action, strength: payoff_normalized })
}

/// Clones the strongest rule (lowest index on ties), widens it just enough
/// to match `sensors`, and appends it. Returns the new rule's index.
pub fn cover(policy: &mut RuleSetPolicy, sensors: &[i64]) -> Result<usize> {
    if policy.rules.is_empty() {
        return Err(Error::EmptyPolicy);
    }
    if policy.matching_rule(sensors).is_some() {
        return Err(Error::NotTriggered("observation is already matched".into()));
    }
    let mut best = 0;
    for (i, r) in policy.rules.iter().enumerate() {
        if r.strength > policy.rules[best].strength {
            best = i;
        }
    }
    let mut rule = policy.rules[best].clone();
    for (c, &v) in rule.conditions.iter_mut().zip(sensors) {
        *c = c.widened_to(v);
    }
    policy.rules.push(rule);
    Ok(policy.rules.len() - 1)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Rule-index groups that fired together in some high-payoff episode,
/// overlapping groups merged. Clusters and their members are ordered by
/// first firing.
pub fn high_payoff_clusters(policy: &RuleSetPolicy, buffer: &ExperienceBuffer) -> Result<Vec<Vec<usize>>> {
    let n = policy.rules.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut order: Vec<usize> = Vec::new();
    let mut seen = vec![false; n];
    for ep in buffer.episodes().filter(|e| e.high_payoff) {
        let fired: Vec<usize> = fired_rule_indices(&ep.trace)?.into_iter().filter(|&i| i < n).collect();
        for &i in &fired {
            if !seen[i] {
                seen[i] = true;
                order.push(i);
            }
        }
        for w in fired.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let root = find(&mut parent, i);
        let slot = *groups.entry(root).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[slot].push(i);
    }
    Ok(clusters)
}

/// Where each child's rules come from: `(parent, rule index)` pairs in
/// child order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossoverPlan {
    pub children: [Vec<(usize, usize)>; 2],
    /// Index of the parent whose size and default action each child takes.
    pub template: [usize; 2],
}

/// Assigns whole clusters to alternating children (starting at random),
/// unclustered rules by coin flip, then moves unclustered rules until the
/// children have the parents' sizes where the clusters allow it.
pub fn clustered_crossover_plan<R: Rng + ?Sized>(
    p1: &RuleSetPolicy,
    b1: &ExperienceBuffer,
    p2: &RuleSetPolicy,
    b2: &ExperienceBuffer,
    rng: &mut R,
) -> Result<CrossoverPlan> {
    if b1.is_empty() || b2.is_empty() {
        return Err(Error::NoTraces);
    }
    let parents = [(p1, b1), (p2, b2)];
    // blocks[child] = list of (rule ids, clustered)
    let mut blocks: [Vec<(Vec<(usize, usize)>, bool)>; 2] = [Vec::new(), Vec::new()];
    let mut next = rng.random_range(0..2usize);
    let mut in_cluster = [vec![false; p1.rules.len()], vec![false; p2.rules.len()]];
    for (p, (policy, buffer)) in parents.iter().enumerate() {
        for cluster in high_payoff_clusters(policy, buffer)? {
            for &i in &cluster {
                in_cluster[p][i] = true;
            }
            blocks[next].push((cluster.into_iter().map(|i| (p, i)).collect(), true));
            next ^= 1;
        }
    }
    for (p, (policy, _)) in parents.iter().enumerate() {
        for i in 0..policy.rules.len() {
            if !in_cluster[p][i] {
                blocks[rng.random_range(0..2usize)].push((vec![(p, i)], false));
            }
        }
    }

    let size = |bs: &[(Vec<(usize, usize)>, bool)]| bs.iter().map(|b| b.0.len()).sum::<usize>();
    let clustered = |bs: &[(Vec<(usize, usize)>, bool)]| bs.iter().filter(|b| b.1).map(|b| b.0.len()).sum::<usize>();
    let (n1, n2) = (p1.rules.len(), p2.rules.len());
    let (c0, c1) = (clustered(&blocks[0]), clustered(&blocks[1]));
    let template = if c0 <= n1 && c1 <= n2 {
        [0, 1]
    } else if c0 <= n2 && c1 <= n1 {
        [1, 0]
    } else {
        [0, 1]
    };
    let target0 = if template[0] == 0 { n1 } else { n2 };
    loop {
        let s0 = size(&blocks[0]);
        let (from, to) = match s0.cmp(&target0) {
            std::cmp::Ordering::Greater => (0, 1),
            std::cmp::Ordering::Less => (1, 0),
            std::cmp::Ordering::Equal => break,
        };
        let movable: Vec<usize> = (0..blocks[from].len()).filter(|&k| !blocks[from][k].1).collect();
        if movable.is_empty() {
            break;
        }
        let k = movable[rng.random_range(0..movable.len())];
        let b = blocks[from].remove(k);
        blocks[to].push(b);
    }

    let mut children: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for (c, bs) in blocks.iter_mut().enumerate() {
        bs.shuffle(rng);
        children[c] = bs.iter().flat_map(|b| b.0.iter().copied()).collect();
    }
    Ok(CrossoverPlan { children, template })
}

/// Experience-clustered recombination of two rule sets.
pub fn clustered_crossover<R: Rng + ?Sized>(
    p1: &RuleSetPolicy,
    b1: &ExperienceBuffer,
    p2: &RuleSetPolicy,
    b2: &ExperienceBuffer,
    rng: &mut R,
) -> Result<(RuleSetPolicy, RuleSetPolicy)> {
    let plan = clustered_crossover_plan(p1, b1, p2, b2, rng)?;
    let parents = [p1, p2];
    let build = |c: usize| RuleSetPolicy {
        rules: plan.children[c].iter().map(|&(p, i)| parents[p].rules[i].clone()).collect(),
        default_action: parents[plan.template[c]].default_action,
    };
    Ok((build(0), build(1)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LamarckConfig {
    pub ea: EaConfig,
    pub num_rules: usize,
    /// Rule-set size at which covering overwrites the weakest rule instead
    /// of appending.
    pub max_rules: usize,
    pub beta: f64,
    pub low_strength: f64,
    pub buffer_capacity: usize,
    pub horizon: usize,
    /// Toggles specialization, covering and clustered crossover. When off,
    /// recombination is plain one-point crossover and unmatched
    /// observations make the policy undefined.
    pub operators: bool,
    pub default_action: Option<usize>,
}

impl Default for LamarckConfig {
    fn default() -> Self {
        LamarckConfig {
            ea: EaConfig::default(),
            num_rules: 10,
            max_rules: 20,
            beta: DEFAULT_BETA,
            low_strength: LOW_STRENGTH,
            buffer_capacity: DEFAULT_CAPACITY,
            horizon: DEFAULT_MAX_STEPS,
            operators: true,
            default_action: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub policy: RuleSetPolicy,
    pub buffer: ExperienceBuffer,
    pub fitness: Option<f64>,
}

/// Runs one episode per start state, covering unmatched observations when
/// the operators are on. Profit sharing and specialization then rewrite
/// the rule set in place, so later generations inherit what was learned.
pub fn live(env: &Environment, agent: &mut Agent, cfg: &LamarckConfig) -> Result<f64> {
    let range = env.payoff_range();
    let mut fitness = 0.0;
    for &(start, p) in env.start_states() {
        let trace = loop {
            match run_episode(env, &agent.policy, start, cfg.horizon) {
                Ok(t) => break t,
                Err(Error::PolicyUndefined { observation }) if cfg.operators => {
                    let sensors = env
                        .observation_by_label(&observation)
                        .ok_or_else(|| Error::InvalidConfig(format!("unknown observation {observation}")))?
                        .sensors
                        .clone();
                    cover_bounded(&mut agent.policy, &sensors, cfg.max_rules)?;
                }
                Err(e) => return Err(e),
            }
        };
        let payoff = trace.total_return;
        profit_sharing_update(&mut agent.policy, &fired_rule_indices(&trace)?, payoff, range, cfg.beta)?;
        agent.buffer.push(trace, payoff);
        fitness += p * payoff;
    }
    if cfg.operators {
        specialize_from_buffer(env, agent, cfg.low_strength)?;
    }
    agent.fitness = Some(fitness);
    Ok(fitness)
}

fn cover_bounded(policy: &mut RuleSetPolicy, sensors: &[i64], max_rules: usize) -> Result<()> {
    let i = cover(policy, sensors)?;
    if policy.rules.len() > max_rules.max(1) {
        let new = policy.rules.pop().expect("cover appended a rule");
        let mut weakest = 0;
        for (k, r) in policy.rules.iter().enumerate() {
            if r.strength < policy.rules[weakest].strength {
                weakest = k;
            }
        }
        policy.rules[weakest] = new;
    } else {
        debug_assert_eq!(i, policy.rules.len() - 1);
    }
    Ok(())
}

/// Specializes each weak rule at most once, using the first high-payoff
/// episode in which it fired.
pub fn specialize_from_buffer(env: &Environment, agent: &mut Agent, low_strength: f64) -> Result<usize> {
    let bounds = env.sensor_bounds();
    let range = env.payoff_range();
    let mut done = vec![false; agent.policy.rules.len()];
    let mut count = 0;
    for ep in agent.buffer.episodes().filter(|e| e.high_payoff) {
        for step in &ep.trace.steps {
            let Some(crate::policies::FiredRule::Rule(i)) = step.fired else { continue };
            if i >= done.len() || done[i] {
                continue;
            }
            let reading = &env.observation(step.observation).sensors;
            match specialize(&agent.policy.rules[i], reading, &bounds, range.normalize(ep.payoff), true, low_strength) {
                Ok(rule) => {
                    agent.policy.rules[i] = rule;
                    done[i] = true;
                    count += 1;
                }
                Err(Error::NotTriggered(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(count)
}

fn select_agent<R: Rng + ?Sized>(agents: &[Agent], selection: Selection, rng: &mut R) -> Result<usize> {
    let pop = crate::evolution::Population {
        members: agents
            .iter()
            .map(|a| crate::evolution::Individual {
                chromosome: Chromosome::Rules(Vec::new()),
                fitness: a.fitness,
                age: 0,
            })
            .collect(),
        generation: 0,
    };
    selection.select(&pop, rng)
}

fn stats(agents: &[Agent], generation: u32) -> Result<GenerationStats> {
    let f: Vec<f64> = agents
        .iter()
        .enumerate()
        .map(|(i, a)| a.fitness.ok_or(Error::Unevaluated(i)))
        .collect::<Result<_>>()?;
    Ok(GenerationStats {
        generation,
        best_fitness: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_fitness: f.iter().sum::<f64>() / f.len() as f64,
        fraction_optimal: None,
    })
}

pub struct LamarckRun {
    pub agents: Vec<Agent>,
    pub history: Vec<GenerationStats>,
}

impl LamarckRun {
    pub fn best(&self) -> Option<&Agent> {
        self.agents
            .iter()
            .filter(|a| a.fitness.is_some())
            .max_by(|a, b| a.fitness.unwrap().total_cmp(&b.fitness.unwrap()))
    }
}

/// Generational EA over rule sets with lifetime learning.
pub fn evolve_rule_sets(env: &Environment, cfg: &LamarckConfig) -> Result<LamarckRun> {
    cfg.ea.validate()?;
    if cfg.num_rules == 0 {
        return Err(Error::InvalidConfig("num_rules must be at least 1".into()));
    }
    let schema = Schema::rules(env, cfg.num_rules, cfg.default_action);
    let buffer = || ExperienceBuffer::new(cfg.buffer_capacity, HighPayoff::Quantile(HIGH_PAYOFF_QUANTILE));
    let to_agent = |c: Chromosome| -> Agent {
        let Chromosome::Rules(rules) = c else { unreachable!("rule schema yields rule chromosomes") };
        Agent { policy: RuleSetPolicy { rules, default_action: cfg.default_action }, buffer: buffer(), fitness: None }
    };
    let mut r = rng::stream(cfg.ea.seed, &[tags::INIT]);
    let mut agents: Vec<Agent> = (0..cfg.ea.population_size).map(|_| to_agent(schema.random(&mut r))).collect();
    let evaluate = |agents: &mut [Agent]| -> Result<()> {
        agents.par_iter_mut().filter(|a| a.fitness.is_none()).try_for_each(|a| live(env, a, cfg).map(|_| ()))
    };
    evaluate(&mut agents)?;
    let mut history = vec![stats(&agents, 0)?];
    let mut r = rng::stream(cfg.ea.seed, &[tags::VARIATION]);
    for generation in 1..=cfg.ea.generations {
        let mut order: Vec<usize> = (0..agents.len()).collect();
        order.sort_by(|&a, &b| agents[b].fitness.unwrap().total_cmp(&agents[a].fitness.unwrap()).then(a.cmp(&b)));
        let mut elite: Vec<usize> = order.into_iter().take(cfg.ea.elitism).collect();
        elite.sort_unstable();
        let mut next: Vec<Agent> = elite.iter().map(|&i| agents[i].clone()).collect();
        while next.len() < cfg.ea.population_size {
            let a = select_agent(&agents, cfg.ea.selection, &mut r)?;
            let b = select_agent(&agents, cfg.ea.selection, &mut r)?;
            let (pa, pb) = (&agents[a], &agents[b]);
            let (c1, c2) = if r.random_bool(cfg.ea.crossover_prob) {
                if cfg.operators {
                    clustered_crossover(&pa.policy, &pa.buffer, &pb.policy, &pb.buffer, &mut r)?
                } else {
                    let (x, y) = crate::evolution::one_point_crossover(
                        &Chromosome::Rules(pa.policy.rules.clone()),
                        &Chromosome::Rules(pb.policy.rules.clone()),
                        &mut r,
                    )?;
                    let Chromosome::Rules(x) = x else { unreachable!() };
                    let Chromosome::Rules(y) = y else { unreachable!() };
                    (
                        RuleSetPolicy { rules: x, default_action: cfg.default_action },
                        RuleSetPolicy { rules: y, default_action: cfg.default_action },
                    )
                }
            } else {
                (pa.policy.clone(), pb.policy.clone())
            };
            for child in [c1, c2] {
                if next.len() < cfg.ea.population_size && !child.rules.is_empty() {
                    let m = mutate(&Chromosome::Rules(child.rules), cfg.ea.mutation_rate, cfg.ea.mutation_sigma, &schema, &mut r);
                    let mut agent = to_agent(m);
                    agent.policy.default_action = child.default_action;
                    next.push(agent);
                }
            }
        }
        agents = next;
        evaluate(&mut agents)?;
        history.push(stats(&agents, generation)?);
    }
    Ok(LamarckRun { agents, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_grid_world, make_hidden_state_world, Step};
    use crate::policies::FiredRule;
    use proptest::prelude::*;
    use rand::Rng;

    fn trace(fired: &[usize]) -> EpisodeTrace {
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

    fn rule(conditions: Vec<Condition>, strength: f64) -> Rule {
        Rule { conditions, action: 0, strength }
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
        assert!((quantile(&[0.0, 10.0], 0.75) - 7.5).abs() < 1e-12);
        assert_eq!(quantile(&[3.0], 0.75), 3.0);
    }

    #[test]
    fn buffer_is_fifo_and_relabels() {
        let mut b = ExperienceBuffer::new(3, HighPayoff::Quantile(0.75));
        for p in [1.0, 2.0, 3.0, 4.0] {
            b.push(trace(&[0]), p);
        }
        let payoffs: Vec<f64> = b.episodes().map(|e| e.payoff).collect();
        assert_eq!(payoffs, vec![2.0, 3.0, 4.0]);
        let flags: Vec<bool> = b.episodes().map(|e| e.high_payoff).collect();
        assert_eq!(flags, vec![false, false, true]);
        let mut fixed = ExperienceBuffer::new(4, HighPayoff::Threshold(2.0));
        fixed.push(trace(&[0]), 2.0);
        fixed.push(trace(&[0]), 1.0);
        assert_eq!(fixed.episodes().map(|e| e.high_payoff).collect::<Vec<_>>(), vec![true, false]);
    }

    #[test]
    fn specialization_halves_interval_around_reading() {
        let r = rule(vec![Condition::Range { lo: 25, hi: 55 }], 0.1);
        let s = specialize(&r, &[40], &[(0, 180)], 0.9, true, LOW_STRENGTH).unwrap();
        assert_eq!(s.conditions[0], Condition::Range { lo: 33, hi: 47 });
        assert_eq!(s.strength, 0.9);
        let any = rule(vec![Condition::Any], 0.1);
        let s = specialize(&any, &[90], &[(0, 180)], 0.5, true, LOW_STRENGTH).unwrap();
        assert_eq!(s.conditions[0], Condition::Range { lo: 45, hi: 135 });
    }

    #[test]
    fn specialization_keeps_exact_and_clips_at_edges() {
        let r = rule(vec![Condition::Exact(3), Condition::Range { lo: 10, hi: 30 }], 0.0);
        let s = specialize(&r, &[3, 10], &[(0, 5), (0, 100)], 1.0, true, LOW_STRENGTH).unwrap();
        assert_eq!(s.conditions[0], Condition::Exact(3));
        assert_eq!(s.conditions[1], Condition::Range { lo: 10, hi: 15 });
    }

    #[test]
    fn specialization_trigger_conditions() {
        let r = rule(vec![Condition::Any], 0.1);
        assert!(matches!(specialize(&r, &[1], &[(0, 4)], 1.0, false, 0.3), Err(Error::NotTriggered(_))));
        let strong = rule(vec![Condition::Any], 0.5);
        assert!(matches!(specialize(&strong, &[1], &[(0, 4)], 1.0, true, 0.3), Err(Error::NotTriggered(_))));
        let miss = rule(vec![Condition::Exact(2)], 0.1);
        assert!(matches!(specialize(&miss, &[1], &[(0, 4)], 1.0, true, 0.3), Err(Error::NotTriggered(_))));
    }

    #[test]
    fn cover_widens_strongest_rule() {
        let env = make_grid_world();
        let mut p = RuleSetPolicy::parse_like(&env, "a # -> R @ 0.9\nb 1 -> D @ 0.2");
        let c3 = env.observation_by_label("c3").unwrap().sensors.clone();
        let i = cover(&mut p, &c3).unwrap();
        assert_eq!(i, 2);
        let new = &p.rules[2];
        assert_eq!(new.conditions[0], Condition::Range { lo: 0, hi: 2 });
        assert_eq!(new.conditions[1], Condition::Any);
        assert_eq!((new.action, new.strength), (0, 0.9));
        assert!(p.matching_rule(&c3).is_some());
        assert!(matches!(cover(&mut p, &c3), Err(Error::NotTriggered(_))));
        let mut all = RuleSetPolicy { rules: vec![rule(vec![Condition::Any, Condition::Any], 0.5)], default_action: None };
        assert!(matches!(cover(&mut all, &c3), Err(Error::NotTriggered(_))));
        let mut empty = RuleSetPolicy { rules: vec![], default_action: None };
        assert_eq!(cover(&mut empty, &c3), Err(Error::EmptyPolicy));
    }

    fn labelled(n: usize, tag: f64) -> RuleSetPolicy {
        RuleSetPolicy {
            rules: (0..n).map(|i| rule(vec![Condition::Exact(i as i64)], tag + i as f64 / 100.0)).collect(),
            default_action: None,
        }
    }

    #[test]
    fn firing_sequence_cluster_stays_together() {
        // rules 3,1,7,5 fire in the high-payoff episode; 8 only in a poor one
        let p1 = labelled(9, 0.0);
        let p2 = labelled(9, 1.0);
        let mut b1 = ExperienceBuffer::new(32, HighPayoff::Threshold(1.0));
        b1.push(trace(&[3, 1, 7, 5]), 1.0);
        b1.push(trace(&[2, 8]), 0.0);
        let mut b2 = ExperienceBuffer::new(32, HighPayoff::Threshold(1.0));
        b2.push(trace(&[0]), 0.0);
        assert_eq!(high_payoff_clusters(&p1, &b1).unwrap(), vec![vec![3, 1, 7, 5]]);
        let mut where8 = [0, 0];
        for seed in 0..200 {
            let plan = clustered_crossover_plan(&p1, &b1, &p2, &b2, &mut rng::seeded(seed)).unwrap();
            let holder = (0..2).find(|&c| plan.children[c].contains(&(0, 3))).unwrap();
            let child = &plan.children[holder];
            let pos = child.iter().position(|&x| x == (0, 3)).unwrap();
            assert_eq!(&child[pos..pos + 4], &[(0, 3), (0, 1), (0, 7), (0, 5)]);
            where8[(0..2).find(|&c| plan.children[c].contains(&(0, 8))).unwrap()] += 1;
            assert_eq!(plan.children[0].len() + plan.children[1].len(), 18);
        }
        assert!(where8[0] > 0 && where8[1] > 0);
    }

    #[test]
    fn no_high_payoff_degenerates_to_random_assignment() {
        let p1 = labelled(6, 0.0);
        let p2 = labelled(4, 1.0);
        let mut b1 = ExperienceBuffer::new(4, HighPayoff::Threshold(5.0));
        b1.push(trace(&[0, 1]), 0.0);
        let b2 = b1.clone();
        let plan = clustered_crossover_plan(&p1, &b1, &p2, &b2, &mut rng::seeded(3)).unwrap();
        assert_eq!(plan.children[0].len(), 6);
        assert_eq!(plan.children[1].len(), 4);
    }

    #[test]
    fn crossover_needs_traces() {
        let p = labelled(3, 0.0);
        let e = ExperienceBuffer::default();
        assert_eq!(clustered_crossover(&p, &e, &p, &e, &mut rng::seeded(0)), Err(Error::NoTraces));
    }

    #[test]
    fn live_covers_and_records() {
        let env = make_hidden_state_world();
        let red = env.observation_by_label("red").unwrap().sensors[0];
        let mut agent = Agent {
            policy: RuleSetPolicy { rules: vec![rule(vec![Condition::Exact(red)], 0.5)], default_action: None },
            buffer: ExperienceBuffer::default(),
            fitness: None,
        };
        let f = live(&env, &mut agent, &LamarckConfig::default()).unwrap();
        assert_eq!(agent.fitness, Some(f));
        assert_eq!(agent.buffer.len(), env.start_states().len());
        for o in env.observations() {
            assert!(agent.policy.matching_rule(&o.sensors).is_some(), "{}", o.label);
        }
        let off = LamarckConfig { operators: false, ..Default::default() };
        let mut bare = Agent { fitness: None, buffer: ExperienceBuffer::default(), ..agent.clone() };
        bare.policy.rules.truncate(1);
        assert!(matches!(live(&env, &mut bare, &off), Err(Error::PolicyUndefined { .. })));
    }

    #[test]
    fn lamarckian_ea_runs_deterministically() {
        let env = make_hidden_state_world();
        let cfg = LamarckConfig {
            ea: EaConfig { population_size: 20, generations: 10, elitism: 1, seed: 5, ..Default::default() },
            num_rules: 4,
            ..Default::default()
        };
        let a = evolve_rule_sets(&env, &cfg).unwrap();
        let b = evolve_rule_sets(&env, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.agents.len(), 20);
        for w in a.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness - 1e-12 || cfg.ea.elitism == 0);
        }
    }

    fn arb_condition(lo: i64, hi: i64) -> impl Strategy<Value = Condition> {
        prop_oneof![
            Just(Condition::Any),
            (lo..=hi).prop_map(Condition::Exact),
            (lo..=hi, lo..=hi).prop_map(|(a, b)| Condition::Range { lo: a.min(b), hi: a.max(b) }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn specialization_is_contained_and_still_matches(
            conds in proptest::collection::vec(arb_condition(0, 60), 1..4),
            seed in any::<u64>(),
        ) {
            let bounds = vec![(0i64, 60i64); conds.len()];
            let mut r = rng::seeded(seed);
            let reading: Vec<i64> = conds.iter().map(|c| match *c {
                Condition::Any => r.random_range(0..=60),
                Condition::Exact(v) => v,
                Condition::Range { lo, hi } => r.random_range(lo..=hi),
            }).collect();
            let original = rule(conds, 0.1);
            let s = specialize(&original, &reading, &bounds, 0.8, true, LOW_STRENGTH).unwrap();
            prop_assert!(s.matches(&reading));
            for v in 0..=60 {
                for (k, c) in s.conditions.iter().enumerate() {
                    if c.matches(v) {
                        prop_assert!(original.conditions[k].matches(v));
                    }
                }
            }
        }

        #[test]
        fn cover_makes_observation_matched(
            conds in proptest::collection::vec(proptest::collection::vec(arb_condition(0, 9), 2), 1..5),
            obs in proptest::collection::vec(0i64..=9, 2),
        ) {
            let mut p = RuleSetPolicy {
                rules: conds.into_iter().enumerate().map(|(i, c)| rule(c, i as f64 / 10.0)).collect(),
                default_action: None,
            };
            let before = p.rules.clone();
            match cover(&mut p, &obs) {
                Ok(i) => {
                    prop_assert!(p.rules[i].matches(&obs));
                    prop_assert_eq!(&p.rules[..before.len()], &before[..]);
                }
                Err(Error::NotTriggered(_)) => prop_assert!(p.matching_rule(&obs).is_some()),
                Err(e) => prop_assert!(false, "{e:?}"),
            }
            prop_assert!(p.matching_rule(&obs).is_some());
        }

        #[test]
        fn clustered_crossover_conserves_and_keeps_clusters_atomic(
            n1 in 1usize..12,
            n2 in 1usize..12,
            eps1 in proptest::collection::vec((proptest::collection::vec(0usize..12, 1..6), 0.0f64..1.0), 1..5),
            eps2 in proptest::collection::vec((proptest::collection::vec(0usize..12, 1..6), 0.0f64..1.0), 1..5),
            seed in any::<u64>(),
        ) {
            let p1 = labelled(n1, 0.0);
            let p2 = labelled(n2, 1.0);
            let fill = |eps: &[(Vec<usize>, f64)], n: usize| {
                let mut b = ExperienceBuffer::default();
                for (fired, payoff) in eps {
                    let fired: Vec<usize> = fired.iter().map(|i| i % n).collect();
                    b.push(trace(&fired), *payoff);
                }
                b
            };
            let (b1, b2) = (fill(&eps1, n1), fill(&eps2, n2));
            let plan = clustered_crossover_plan(&p1, &b1, &p2, &b2, &mut rng::seeded(seed)).unwrap();
            let mut all: Vec<(usize, usize)> = plan.children.concat();
            all.sort();
            let expected: Vec<(usize, usize)> = (0..n1).map(|i| (0, i)).chain((0..n2).map(|i| (1, i))).collect();
            prop_assert_eq!(all, expected);
            for (p, (policy, buffer)) in [(&p1, &b1), (&p2, &b2)].into_iter().enumerate() {
                for cluster in high_payoff_clusters(policy, buffer).unwrap() {
                    let holders: Vec<usize> = cluster
                        .iter()
                        .map(|&i| (0..2).find(|&c| plan.children[c].contains(&(p, i))).unwrap())
                        .collect();
                    prop_assert!(holders.iter().all(|&h| h == holders[0]));
                }
            }
            let (c1, c2) = clustered_crossover(&p1, &b1, &p2, &b2, &mut rng::seeded(seed)).unwrap();
            let mut sizes = [c1.rules.len(), c2.rules.len()];
            sizes.sort();
            let mut parents = [n1, n2];
            parents.sort();
            prop_assert_eq!(sizes.iter().sum::<usize>(), parents.iter().sum::<usize>());
        }
    }

    impl RuleSetPolicy {
        fn parse_like(env: &Environment, text: &str) -> RuleSetPolicy {
            let rules = text.lines().map(|l| Rule::parse(l, env.sensors(), env.actions()).unwrap()).collect();
            RuleSetPolicy::new(rules, None).unwrap()
        }
    }
}
