//! Tabular temporal-difference baseline: TD(0), Q-learning over
//! observations, greedy extraction and an exact value-iteration oracle.

use std::fmt::Write as _;

use rand::Rng;

use crate::envs::{Environment, Successor, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::policies::TabularPolicy;
use crate::rng;

/// Q-values keyed by `(row, action)`. Rows are observations for learned
/// tables and true states for the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    num_actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl QTable {
    pub fn new(rows: usize, num_actions: usize) -> Self {
        QTable { num_actions, values: vec![0.0; rows * num_actions], visits: vec![0; rows * num_actions] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let num_actions = rows.first().map_or(0, Vec::len);
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        let visits = vec![0; values.len()];
        QTable { num_actions, values, visits }
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.num_actions).unwrap_or(0)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, row: usize, action: usize) -> f64 {
        self.values[row * self.num_actions + action]
    }

    pub fn set(&mut self, row: usize, action: usize, v: f64) {
        self.values[row * self.num_actions + action] = v;
    }

    pub fn visits(&self, row: usize, action: usize) -> u64 {
        self.visits[row * self.num_actions + action]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.num_actions..(row + 1) * self.num_actions]
    }

    /// `max_a Q(row, a)`.
    pub fn max(&self, row: usize) -> f64 {
        self.row(row).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `argmax_a Q(row, a)`, lowest action id on ties.
    pub fn greedy_action(&self, row: usize) -> usize {
        let r = self.row(row);
        let mut best = 0;
        for (a, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = a;
            }
        }
        best
    }

    /// `Q(s,a) += alpha * (gamma * max Q(s',.) - Q(s,a) + r)`; a terminal
    /// successor (`None`) contributes 0.
    pub fn update_discounted(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, alpha: f64, gamma: f64) {
        let future = next.map_or(0.0, |n| self.max(n));
        let i = s * self.num_actions + a;
        self.visits[i] += 1;
        self.values[i] += alpha * (gamma * future - self.values[i] + r);
    }

    pub fn update(&mut self, s: usize, a: usize, r: f64, next: Option<usize>, alpha: f64) {
        self.update_discounted(s, a, r, next, alpha, 1.0);
    }

    /// Columns are rows of the table (labelled), one line per action.
    pub fn to_csv(&self, row_labels: &[&str], action_labels: &[&str]) -> String {
        let mut out = String::from("action");
        for l in row_labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (a, label) in action_labels.iter().enumerate() {
            out.push_str(label);
            for row in 0..self.rows() {
                let _ = write!(out, ",{}", self.get(row, a));
            }
            out.push('\n');
        }
        out
    }
}

/// Q-learning update with `gamma = 1`.
pub fn q_update(q: &mut QTable, s: usize, a: usize, r: f64, next: Option<usize>, alpha: f64) {
    q.update(s, a, r, next, alpha);
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn new(n: usize) -> Self {
        ValueTable { values: vec![0.0; n] }
    }
}

/// `V(s) += alpha * (V(s') - V(s) + r)`, terminal `V = 0`.
pub fn td0_update(v: &mut ValueTable, s: usize, next: Option<usize>, r: f64, alpha: f64) {
    let future = next.map_or(0.0, |n| v.values[n]);
    v.values[s] += alpha * (future - v.values[s] + r);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    /// `1/k` on the k-th update of each (observation, action) pair.
    Harmonic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdConfig {
    pub learning_rate: LearningRate,
    pub epsilon: f64,
    pub discount: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            learning_rate: LearningRate::Harmonic,
            epsilon: 0.1,
            discount: 1.0,
            episodes: 10_000,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if let LearningRate::Fixed(a) = self.learning_rate {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidConfig(format!("learning rate {a} outside (0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig(format!("discount {} outside [0, 1]", self.discount)));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of a Q-learning run.
#[derive(Clone, Debug, PartialEq)]
pub struct QLearningRun {
    pub q: QTable,
    /// Undiscounted return of every training episode.
    pub returns: Vec<f64>,
}

/// Epsilon-greedy Q-learning with the table keyed by observations, so
/// aliased states share entries.
pub fn run_q_learning(env: &Environment, cfg: &TdConfig) -> Result<QTable> {
    Ok(q_learning(env, cfg)?.q)
}

pub fn q_learning(env: &Environment, cfg: &TdConfig) -> Result<QLearningRun> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let mut q = QTable::new(env.num_observations(), env.num_actions());
    let mut returns = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut state = env.sample_start(&mut r);
        let mut total = 0.0;
        for _ in 0..cfg.max_steps {
            let obs = env.observe(state).id;
            let action = if r.random_bool(cfg.epsilon) {
                r.random_range(0..env.num_actions())
            } else {
                q.greedy_action(obs)
            };
            let succ = env.successor(state, action);
            let (reward, next) = match succ {
                Successor::State(t) => (env.reward(state), Some(t)),
                Successor::Terminal { payoff } => (env.reward(state) + payoff, None),
            };
            total += reward;
            let alpha = match cfg.learning_rate {
                LearningRate::Fixed(a) => a,
                LearningRate::Harmonic => 1.0 / (q.visits(obs, action) + 1) as f64,
            };
            q.update_discounted(obs, action, reward, next.map(|t| env.observe(t).id), alpha, cfg.discount);
            match next {
                Some(t) => state = t,
                None => break,
            }
        }
        returns.push(total);
    }
    Ok(QLearningRun { q, returns })
}

/// Greedy policy over the table's rows, lowest action id on ties.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    TabularPolicy::new((0..q.rows()).map(|s| q.greedy_action(s)).collect())
}

/// Exact `Q(s,a) = r(s) + max_a' Q(s',a')` over true states, terminal
/// successors contributing their payoff.
pub fn value_iteration_oracle(env: &Environment) -> Result<QTable> {
    let n = env.num_states();
    let m = env.num_actions();
    let mut q = QTable::new(n, m);
    let bound = n + 2;
    for _ in 0..bound {
        let mut next = q.clone();
        for s in 0..n {
            for a in 0..m {
                let v = env.reward(s)
                    + match env.successor(s, a) {
                        Successor::State(t) => q.max(t),
                        Successor::Terminal { payoff } => payoff,
                    };
                next.set(s, a, v);
            }
        }
        if next == q {
            return Ok(q);
        }
        q = next;
    }
    Err(Error::NonEpisodic(bound))
}

/// Projects a state-keyed table onto observations; `None` for an
/// observation whose states disagree.
pub fn project_to_observations(env: &Environment, q: &QTable) -> Vec<Vec<Option<f64>>> {
    let mut out: Vec<Vec<Option<Option<f64>>>> = vec![vec![None; env.num_actions()]; env.num_observations()];
    for s in 0..env.num_states() {
        let o = env.observe(s).id;
        for a in 0..env.num_actions() {
            let v = q.get(s, a);
            out[o][a] = Some(match out[o][a] {
                None => Some(v),
                Some(Some(prev)) if prev == v => Some(v),
                Some(_) => None,
            });
        }
    }
    out.into_iter().map(|row| row.into_iter().map(Option::flatten).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{expected_return, make_grid_world, make_hidden_state_world};

    #[test]
    fn single_terminal_update() {
        let mut q = QTable::new(2, 2);
        q_update(&mut q, 0, 1, 3.0, None, 1.0);
        assert_eq!(q.get(0, 1), 3.0);
    }

    #[test]
    fn zero_error_is_fixed_point() {
        let mut q = QTable::from_rows(vec![vec![2.0, 0.0], vec![2.0, 1.0]]);
        let before = q.clone();
        q_update(&mut q, 0, 0, 0.0, Some(1), 0.5);
        assert_eq!(q.get(0, 0), before.get(0, 0));
        q_update(&mut q, 0, 1, 5.0, Some(1), 0.0);
        assert_eq!(q.get(0, 1), 0.0);
    }

    #[test]
    fn harmonic_rate_gives_running_mean() {
        let samples = [3.0, -4.0, 3.0, 3.0, -4.0, -4.0, 3.0, -4.0];
        let mut q = QTable::new(1, 2);
        for (k, &r) in samples.iter().enumerate() {
            q_update(&mut q, 0, 0, r, None, 1.0 / (k + 1) as f64);
            let mean = samples[..=k].iter().sum::<f64>() / (k + 1) as f64;
            assert!((q.get(0, 0) - mean).abs() < 1e-12);
        }
        assert!((q.get(0, 0) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn td0_chain_propagates_reward() {
        // 0 -> 1 -> 2 -> 3 -> terminal, reward 1 only on the last step
        let mut v = ValueTable::new(4);
        for _ in 0..200 {
            for s in 0..4 {
                let (next, r) = if s == 3 { (None, 1.0) } else { (Some(s + 1), 0.0) };
                td0_update(&mut v, s, next, r, 0.5);
            }
        }
        for s in 0..4 {
            assert!((v.values[s] - 1.0).abs() < 1e-9);
        }
        let mut w = ValueTable { values: vec![0.0, 2.0] };
        td0_update(&mut w, 0, Some(1), 3.0, 1.0);
        assert_eq!(w.values[0], 5.0);
        let mut z = ValueTable { values: vec![1.0, 1.0] };
        td0_update(&mut z, 0, Some(1), 0.0, 0.3);
        assert_eq!(z.values[0], 1.0);
    }

    #[test]
    fn oracle_reproduces_quoted_entries() {
        let env = make_grid_world();
        let q = value_iteration_oracle(&env).unwrap();
        let s = |l: &str| env.state_by_label(l).unwrap();
        assert_eq!(q.get(s("a1"), 0), 17.0);
        assert_eq!(q.get(s("b2"), 0), 15.0);
        assert_eq!(q.get(s("b2"), 1), 8.0);
        assert_eq!(q.get(s("e5"), 0), 1.0);
        assert_eq!(q.get(s("a5"), 1), 1.0);
        let greedy = greedy_policy(&q);
        assert_eq!(expected_return(&env, &greedy).unwrap(), 17.0);
    }

    #[test]
    fn oracle_over_true_hidden_states() {
        let env = make_hidden_state_world();
        let q = value_iteration_oracle(&env).unwrap();
        let s = |l: &str| env.state_by_label(l).unwrap();
        assert_eq!(q.get(s("blue1"), 0), 3.0);
        assert_eq!(q.get(s("blue2"), 0), -4.0);
        assert_eq!(q.get(s("red"), 1), 3.0);
        let by_obs = project_to_observations(&env, &q);
        assert_eq!(by_obs[2][0], None);
        assert_eq!(by_obs[2][1], Some(1.0));
        assert_eq!(by_obs[0][1], Some(3.0));
    }

    #[test]
    fn non_episodic_detected() {
        use crate::envs::{Action, EnvironmentSpec, Observation, PayoffRange};
        let env = Environment::new(EnvironmentSpec {
            name: "loop".into(),
            state_labels: vec!["s".into()],
            observations: vec![Observation { id: 0, label: "s".into(), sensors: vec![] }],
            actions: vec![Action { id: 0, label: "A".into() }],
            sensors: vec![],
            observe: vec![0],
            rewards: vec![1.0],
            transitions: vec![vec![Successor::State(0)]],
            start_states: vec![(0, 1.0)],
            payoff_range: PayoffRange::new(0.0, 1.0),
        })
        .unwrap();
        assert!(matches!(value_iteration_oracle(&env), Err(Error::NonEpisodic(_))));
    }

    #[test]
    fn greedy_ties_and_shift_invariance() {
        let q = QTable::new(3, 2);
        assert_eq!(greedy_policy(&q).genes, vec![0, 0, 0]);
        let env = make_grid_world();
        let oracle = value_iteration_oracle(&env).unwrap();
        let shifted = QTable::from_rows((0..25).map(|s| oracle.row(s).iter().map(|v| v + 7.5).collect()).collect());
        assert_eq!(greedy_policy(&oracle), greedy_policy(&shifted));
    }

    #[test]
    fn q_learning_is_seed_deterministic() {
        let env = make_hidden_state_world();
        let cfg = TdConfig { episodes: 500, seed: 4, ..Default::default() };
        assert_eq!(q_learning(&env, &cfg).unwrap(), q_learning(&env, &cfg).unwrap());
    }
}
