//! Finite episodic environments and an exact episode runner.
//!
//! Rewards are attached to states and collected on entry, the start state
//! included. Leaving the state space goes to a terminal node that may carry
//! its own payoff (the hidden-state world's goal nodes); the grid world's
//! exits pay nothing.
//!
//! A trace step taken in state `s` records `r(s)` plus the terminal payoff
//! when the action ends the episode, so `Q(s, a) = r(s) + V(next)` holds for
//! step rewards exactly as it does for the tables computed by [`crate::td`].

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::policies::{Decision, DecisionPolicy, FiredRule, TabularPolicy};

pub type StateId = usize;

/// Default horizon for episode runs.
pub const DEFAULT_MAX_STEPS: usize = 1000;

/// Default cap on [`enumerate_policies`].
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 1 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub id: usize,
    pub label: String,
    /// One integer reading per sensor of the environment.
    pub sensors: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Action {
    pub id: usize,
    pub label: String,
}

/// An integer-valued sensor with inclusive bounds and optional value names.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensor {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    /// Names for `lo..=hi`, in order. Empty means values print as numbers.
    pub value_labels: Vec<String>,
}

impl Sensor {
    pub fn numeric(name: &str, lo: i64, hi: i64) -> Self {
        Sensor { name: name.to_string(), lo, hi, value_labels: Vec::new() }
    }

    pub fn labelled(name: &str, lo: i64, labels: &[&str]) -> Self {
        Sensor {
            name: name.to_string(),
            lo,
            hi: lo + labels.len() as i64 - 1,
            value_labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn bounds(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn format_value(&self, v: i64) -> String {
        if v >= self.lo && v <= self.hi {
            if let Some(l) = self.value_labels.get((v - self.lo) as usize) {
                return l.clone();
            }
        }
        v.to_string()
    }

    pub fn parse_value(&self, s: &str) -> Option<i64> {
        if let Some(pos) = self.value_labels.iter().position(|l| l == s) {
            return Some(self.lo + pos as i64);
        }
        s.parse().ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Successor {
    State(StateId),
    Terminal { payoff: f64 },
}

/// Min/max achievable episode return, used to map payoffs onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PayoffRange {
    pub lo: f64,
    pub hi: f64,
}

impl PayoffRange {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(hi > lo, "payoff range must be non-degenerate");
        PayoffRange { lo, hi }
    }

    pub fn normalize(&self, payoff: f64) -> f64 {
        ((payoff - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

/// Raw parts of an environment, validated by [`Environment::new`].
#[derive(Clone, Debug)]
pub struct EnvironmentSpec {
    pub name: String,
    pub state_labels: Vec<String>,
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub sensors: Vec<Sensor>,
    /// Observation id per state.
    pub observe: Vec<usize>,
    /// Entry reward per state.
    pub rewards: Vec<f64>,
    /// `transitions[state][action]`.
    pub transitions: Vec<Vec<Successor>>,
    pub start_states: Vec<(StateId, f64)>,
    pub payoff_range: PayoffRange,
}

#[derive(Clone, Debug)]
pub struct Environment {
    spec: EnvironmentSpec,
}

impl Environment {
    pub fn new(spec: EnvironmentSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidEnvironment(m));
        let n = spec.state_labels.len();
        if n == 0 {
            return bad("no states".into());
        }
        if spec.observations.is_empty() || spec.actions.is_empty() {
            return bad("empty observation or action alphabet".into());
        }
        if spec.observe.len() != n || spec.rewards.len() != n || spec.transitions.len() != n {
            return bad("per-state tables disagree with state count".into());
        }
        let mut seen = HashSet::new();
        for (i, o) in spec.observations.iter().enumerate() {
            if o.id != i {
                return bad(format!("observation `{}` has id {} at position {i}", o.label, o.id));
            }
            if !seen.insert(o.label.as_str()) {
                return bad(format!("duplicate observation label `{}`", o.label));
            }
            if o.sensors.len() != spec.sensors.len() {
                return bad(format!("observation `{}` has wrong sensor count", o.label));
            }
            for (v, s) in o.sensors.iter().zip(&spec.sensors) {
                if *v < s.lo || *v > s.hi {
                    return bad(format!("observation `{}` reads {v} outside sensor `{}`", o.label, s.name));
                }
            }
        }
        for (i, a) in spec.actions.iter().enumerate() {
            if a.id != i {
                return bad(format!("action `{}` has id {} at position {i}", a.label, a.id));
            }
        }
        for s in 0..n {
            if spec.observe[s] >= spec.observations.len() {
                return bad(format!("state {s} observes an unknown observation"));
            }
            if !spec.rewards[s].is_finite() {
                return bad(format!("state {s} has a non-finite reward"));
            }
            if spec.transitions[s].len() != spec.actions.len() {
                return bad(format!("state {s} lacks a successor for some action"));
            }
            for succ in &spec.transitions[s] {
                match *succ {
                    Successor::State(t) if t >= n => {
                        return bad(format!("state {s} transitions to unknown state {t}"))
                    }
                    Successor::Terminal { payoff } if !payoff.is_finite() => {
                        return bad(format!("state {s} has a non-finite terminal payoff"))
                    }
                    _ => {}
                }
            }
        }
        if spec.start_states.is_empty() {
            return bad("no start states".into());
        }
        let total: f64 = spec.start_states.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 || spec.start_states.iter().any(|&(s, p)| s >= n || p < 0.0) {
            return bad("start distribution must be a probability distribution over states".into());
        }
        Ok(Environment { spec })
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_states(&self) -> usize {
        self.spec.state_labels.len()
    }

    pub fn num_observations(&self) -> usize {
        self.spec.observations.len()
    }

    pub fn num_actions(&self) -> usize {
        self.spec.actions.len()
    }

    pub fn state_label(&self, s: StateId) -> &str {
        &self.spec.state_labels[s]
    }

    pub fn state_by_label(&self, label: &str) -> Option<StateId> {
        self.spec.state_labels.iter().position(|l| l == label)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.spec.observations
    }

    pub fn observation(&self, id: usize) -> &Observation {
        &self.spec.observations[id]
    }

    pub fn observation_by_label(&self, label: &str) -> Option<&Observation> {
        self.spec.observations.iter().find(|o| o.label == label)
    }

    pub fn actions(&self) -> &[Action] {
        &self.spec.actions
    }

    pub fn action_by_label(&self, label: &str) -> Option<usize> {
        self.spec.actions.iter().position(|a| a.label == label)
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.spec.sensors
    }

    pub fn sensor_bounds(&self) -> Vec<(i64, i64)> {
        self.spec.sensors.iter().map(Sensor::bounds).collect()
    }

    pub fn observe(&self, s: StateId) -> &Observation {
        &self.spec.observations[self.spec.observe[s]]
    }

    pub fn reward(&self, s: StateId) -> f64 {
        self.spec.rewards[s]
    }

    pub fn successor(&self, s: StateId, action: usize) -> Successor {
        self.spec.transitions[s][action]
    }

    /// Applies `action` in `s`; the reward is what entering the successor
    /// pays (the next state's reward, or the terminal payoff).
    pub fn step(&self, s: StateId, action: usize) -> (Successor, f64) {
        let succ = self.successor(s, action);
        let r = match succ {
            Successor::State(t) => self.reward(t),
            Successor::Terminal { payoff } => payoff,
        };
        (succ, r)
    }

    pub fn start_states(&self) -> &[(StateId, f64)] {
        &self.spec.start_states
    }

    pub fn payoff_range(&self) -> PayoffRange {
        self.spec.payoff_range
    }

    /// Draws a start state from the start distribution.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        let starts = &self.spec.start_states;
        if starts.len() == 1 {
            return starts[0].0;
        }
        let mut u: f64 = rng.random();
        for &(s, p) in starts {
            if u < p {
                return s;
            }
            u -= p;
        }
        starts[starts.len() - 1].0
    }

    /// Flat `key = value` dump of states, rewards and transitions.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let sp = &self.spec;
        let _ = writeln!(out, "name = {}", sp.name);
        let _ = writeln!(out, "num_states = {}", self.num_states());
        let _ = writeln!(out, "num_observations = {}", self.num_observations());
        let _ = writeln!(out, "num_actions = {}", self.num_actions());
        let labels: Vec<&str> = sp.actions.iter().map(|a| a.label.as_str()).collect();
        let _ = writeln!(out, "actions = {}", labels.join(","));
        let labels: Vec<&str> = sp.observations.iter().map(|o| o.label.as_str()).collect();
        let _ = writeln!(out, "observations = {}", labels.join(","));
        for &(s, p) in &sp.start_states {
            let _ = writeln!(out, "start.{} = {}", sp.state_labels[s], p);
        }
        for s in 0..self.num_states() {
            let label = &sp.state_labels[s];
            let _ = writeln!(out, "state.{label}.observe = {}", self.observe(s).label);
            let _ = writeln!(out, "state.{label}.reward = {}", sp.rewards[s]);
            for a in &sp.actions {
                let target = match sp.transitions[s][a.id] {
                    Successor::State(t) => sp.state_labels[t].clone(),
                    Successor::Terminal { payoff } => format!("terminal({payoff})"),
                };
                let _ = writeln!(out, "transition.{label}.{} = {target}", a.label);
            }
        }
        out
    }
}

/// Grid world: 5x5 boxes, actions right and down, start at `a1`.
///
/// States, observations and tabular genes are ordered `a1, a2, .., a5, b1, .., e5`
/// (id = column * 5 + row - 1). Each observation reads two sensors, the
/// column (`a`..`e`) and the row (1..5).
pub fn make_grid_world() -> Environment {
    const PAYOFF: [[f64; 5]; 5] = [
        [0.0, 2.0, 1.0, -1.0, 1.0],
        [1.0, 1.0, 2.0, 0.0, 2.0],
        [3.0, -5.0, 4.0, 3.0, 1.0],
        [1.0, -2.0, 4.0, 1.0, 2.0],
        [1.0, 1.0, 2.0, 1.0, 1.0],
    ];
    const COLS: [&str; 5] = ["a", "b", "c", "d", "e"];
    let id = |col: usize, row: usize| col * 5 + row;

    let mut state_labels = Vec::with_capacity(25);
    let mut observations = Vec::with_capacity(25);
    let mut rewards = Vec::with_capacity(25);
    let mut transitions = Vec::with_capacity(25);
    for (col, c) in COLS.iter().enumerate() {
        for row in 0..5 {
            let label = format!("{c}{}", row + 1);
            observations.push(Observation {
                id: id(col, row),
                label: label.clone(),
                sensors: vec![col as i64, row as i64 + 1],
            });
            state_labels.push(label);
            rewards.push(PAYOFF[row][col]);
            let exit = Successor::Terminal { payoff: 0.0 };
            let right = if col == 4 { exit } else { Successor::State(id(col + 1, row)) };
            let down = if row == 4 { exit } else { Successor::State(id(col, row + 1)) };
            transitions.push(vec![right, down]);
        }
    }
    Environment::new(EnvironmentSpec {
        name: "grid".into(),
        state_labels,
        observations,
        actions: vec![
            Action { id: 0, label: "R".into() },
            Action { id: 1, label: "D".into() },
        ],
        sensors: vec![
            Sensor::labelled("column", 0, &COLS),
            Sensor::numeric("row", 1, 5),
        ],
        observe: (0..25).collect(),
        rewards,
        transitions,
        start_states: vec![(0, 1.0)],
        payoff_range: PayoffRange::new(-8.0, 17.0),
    })
    .expect("grid world is well formed")
}

/// Hidden-state world with two aliased blue states.
///
/// The unlabelled goal payoffs (red,L 0.0; green,R 0.75; blue2,L -4.0) are
/// the unique values consistent with the blue averages -0.5/1.0 and the two
/// policy returns 1.0 and 1.875.
pub fn make_hidden_state_world() -> Environment {
    const RED: usize = 0;
    const GREEN: usize = 1;
    const BLUE1: usize = 2;
    const BLUE2: usize = 3;
    let t = |payoff| Successor::Terminal { payoff };
    let obs = |id: usize, label: &str| Observation {
        id,
        label: label.into(),
        sensors: vec![id as i64],
    };
    let mut transitions = vec![Vec::new(); 4];
    // actions: L = 0, R = 1
    transitions[RED] = vec![t(0.0), Successor::State(BLUE1)];
    transitions[GREEN] = vec![Successor::State(BLUE2), t(0.75)];
    transitions[BLUE1] = vec![t(3.0), t(1.0)];
    transitions[BLUE2] = vec![t(-4.0), t(1.0)];
    Environment::new(EnvironmentSpec {
        name: "hidden".into(),
        state_labels: ["red", "green", "blue1", "blue2"].map(String::from).to_vec(),
        observations: vec![obs(0, "red"), obs(1, "green"), obs(2, "blue")],
        actions: vec![
            Action { id: 0, label: "L".into() },
            Action { id: 1, label: "R".into() },
        ],
        sensors: vec![Sensor::labelled("color", 0, &["red", "green", "blue"])],
        observe: vec![0, 1, 2, 2],
        rewards: vec![0.0; 4],
        transitions,
        start_states: vec![(RED, 0.5), (GREEN, 0.5)],
        payoff_range: PayoffRange::new(-4.0, 3.0),
    })
    .expect("hidden-state world is well formed")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub observation: usize,
    pub action: usize,
    pub reward: f64,
    pub fired: Option<FiredRule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub start: StateId,
    pub steps: Vec<Step>,
    pub total_return: f64,
    /// True when the episode reached a terminal node within the horizon.
    pub terminated: bool,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Rule indices in firing order; `None` if any step lacks a firing record.
    pub fn fired_rules(&self) -> Option<Vec<FiredRule>> {
        self.steps.iter().map(|s| s.fired).collect()
    }
}

/// Runs one episode with an arbitrary decision procedure.
pub fn run_episode_with<F>(
    env: &Environment,
    start: StateId,
    max_steps: usize,
    mut decide: F,
) -> Result<EpisodeTrace>
where
    F: FnMut(&Observation) -> Result<Decision>,
{
    if start >= env.num_states() {
        return Err(Error::InvalidConfig(format!("start state {start} out of range")));
    }
    if max_steps == 0 {
        return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
    }
    let mut steps = Vec::new();
    let mut state = start;
    let mut terminated = false;
    while steps.len() < max_steps {
        let obs = env.observe(state);
        let decision = decide(obs).map_err(|e| match e {
            Error::NoMatch { observation } => Error::PolicyUndefined { observation },
            other => other,
        })?;
        if decision.action >= env.num_actions() {
            return Err(Error::PolicyUndefined { observation: obs.label.clone() });
        }
        let mut reward = env.reward(state);
        let succ = env.successor(state, decision.action);
        if let Successor::Terminal { payoff } = succ {
            reward += payoff;
        }
        steps.push(Step {
            observation: obs.id,
            action: decision.action,
            reward,
            fired: decision.fired,
        });
        match succ {
            Successor::State(next) => state = next,
            Successor::Terminal { .. } => {
                terminated = true;
                break;
            }
        }
    }
    let total_return = steps.iter().map(|s| s.reward).sum();
    Ok(EpisodeTrace { start, steps, total_return, terminated })
}

/// Follows `policy` from `start` until termination or `max_steps`.
pub fn run_episode<P: DecisionPolicy + ?Sized>(
    env: &Environment,
    policy: &P,
    start: StateId,
    max_steps: usize,
) -> Result<EpisodeTrace> {
    run_episode_with(env, start, max_steps, |obs| policy.decide(obs))
}

/// Exact expectation of the undiscounted return over the start distribution.
pub fn expected_return<P: DecisionPolicy + ?Sized>(env: &Environment, policy: &P) -> Result<f64> {
    env.start_states().iter().try_fold(0.0, |acc, &(s, p)| {
        Ok(acc + p * run_episode(env, policy, s, DEFAULT_MAX_STEPS)?.total_return)
    })
}

pub fn enumerate_policies(env: &Environment) -> Result<Vec<TabularPolicy>> {
    enumerate_policies_bounded(env, DEFAULT_ENUMERATION_LIMIT)
}

/// All `|A|^|O|` deterministic observation-conditioned policies, the last
/// observation's gene varying fastest.
pub fn enumerate_policies_bounded(env: &Environment, limit: u128) -> Result<Vec<TabularPolicy>> {
    let n_obs = env.num_observations();
    let n_act = env.num_actions();
    let count = (n_act as u128)
        .checked_pow(n_obs as u32)
        .unwrap_or(u128::MAX);
    if count > limit {
        return Err(Error::TooLarge { count, limit });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut genes = vec![0usize; n_obs];
    loop {
        out.push(TabularPolicy::new(genes.clone()));
        let mut i = n_obs;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            genes[i] += 1;
            if genes[i] < n_act {
                break;
            }
            genes[i] = 0;
        }
    }
}
