//! Canned reproductions and a configuration-driven experiment runner.
//! Everything here is deterministic per seed and independent of the
//! rayon pool size.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::credit::FitnessConfig;
use crate::envs::{
    enumerate_policies_bounded, expected_return, make_grid_world, make_hidden_state_world, Environment,
    DEFAULT_ENUMERATION_LIMIT,
};
use crate::error::{Error, Result};
use crate::evolution::{
    evolve, run_genitor, EaConfig, GenerationStats, GenitorConfig, PolicyEvaluator, Selection,
};
use crate::lamarck::{evolve_rule_sets, LamarckConfig};
use crate::policies::{decode, Chromosome, InputEncoding, Schema, TabularPolicy};
use crate::rng::derive_seed;
use crate::sane::{run_sane, SaneConfig, SaneStats};
use crate::td::{greedy_policy, q_learning, value_iteration_oracle, LearningRate, TdConfig};

/// Published reference values for the two worlds.
pub mod reference {
    /// Grid-world Q-values for action R, states `a1..e5`.
    pub const GRID_Q_RIGHT: [f64; 25] = [
        17.0, 16.0, 10.0, 7.0, 6.0, 17.0, 15.0, 7.0, 6.0, 5.0, 7.0, 9.0, 11.0, 8.0, 4.0, 6.0, 6.0, 7.0, 4.0, 2.0,
        1.0, 2.0, 1.0, 2.0, 1.0,
    ];
    /// Grid-world Q-values for action D, states `a1..e5`.
    pub const GRID_Q_DOWN: [f64; 25] = [
        16.0, 11.0, 10.0, 7.0, 1.0, 17.0, 8.0, 1.0, 3.0, 1.0, 15.0, 14.0, 12.0, 8.0, 2.0, 6.0, 7.0, 7.0, 3.0, 1.0,
        7.0, 6.0, 4.0, 3.0, 1.0,
    ];
    pub const GRID_OPTIMUM: f64 = 17.0;
    /// Complete example grid policies `(id, genes a1..e5, fitness)`.
    pub const GRID_POLICIES: [(u32, &str, f64); 4] = [
        (1, "DRDDRRRRRRDRDDRRDRRRDRRDR", 8.0),
        (2, "DDDDRRRRRRDDRRDRDRRRDRDDR", 9.0),
        (3, "RDDRRDRDRRDDDRDRDRRRDRDDD", 17.0),
        (5, "RDDDRDRRDRRDRRDRDRRDDRDDD", 16.0),
    ];
    /// Hidden world, genes for (red, green, blue) with L = 0, R = 1.
    pub const HIDDEN_OPTIMAL: [usize; 3] = [1, 1, 0];
    pub const HIDDEN_OPTIMUM: f64 = 1.875;
    /// What a Q-learner that cannot tell the blue states apart settles on.
    pub const HIDDEN_VALUE_POLICY: [usize; 3] = [1, 0, 1];
    pub const HIDDEN_VALUE_POLICY_RETURN: f64 = 1.0;
    pub const HIDDEN_Q_BLUE_LEFT: f64 = -0.5;
    pub const HIDDEN_Q_BLUE_RIGHT: f64 = 1.0;
}

pub const REPRODUCTIONS: [&str; 5] = ["q-table", "grid-optimal", "table2-fitness", "table5", "figure14"];

/// Outcome of a reproduction: human-readable lines, optional CSV, verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
    pub csv: Option<String>,
    pub passed: bool,
}

pub fn reproduce(name: &str, seed: u64, runs: usize) -> Result<Report> {
    match name {
        "q-table" => reproduce_q_table(),
        "grid-optimal" => reproduce_grid_optimal(seed),
        "table2-fitness" => reproduce_grid_policies(),
        "table5" => reproduce_hidden_policies(seed),
        "figure14" => reproduce_fraction_optimal(seed, runs).map(|(r, _)| r),
        other => Err(Error::InvalidConfig(format!(
            "unknown reproduction `{other}`; expected one of {}",
            REPRODUCTIONS.join(", ")
        ))),
    }
}

fn labels(env: &Environment) -> (Vec<&str>, Vec<&str>) {
    (
        env.observations().iter().map(|o| o.label.as_str()).collect(),
        env.actions().iter().map(|a| a.label.as_str()).collect(),
    )
}

/// Oracle Q-table against the reference grid values.
pub fn reproduce_q_table() -> Result<Report> {
    let env = make_grid_world();
    let q = value_iteration_oracle(&env)?;
    let mut lines = Vec::new();
    let mut matches = 0;
    for s in 0..env.num_states() {
        for (a, expected) in [reference::GRID_Q_RIGHT[s], reference::GRID_Q_DOWN[s]].into_iter().enumerate() {
            let got = q.get(s, a);
            if got == expected {
                matches += 1;
            } else {
                lines.push(format!(
                    "mismatch {} {}: oracle={got} expected={expected}",
                    env.state_label(s),
                    env.actions()[a].label
                ));
            }
        }
    }
    let total = 2 * env.num_states();
    lines.push(format!("{matches}/{total} Q-values match"));
    let (obs, acts) = labels(&env);
    Ok(Report { lines, csv: Some(q.to_csv(&obs, &acts)), passed: matches == total })
}

/// Greedy oracle policy and an evolved tabular policy, both against 17.
pub fn reproduce_grid_optimal(seed: u64) -> Result<Report> {
    let env = make_grid_world();
    let greedy = greedy_policy(&value_iteration_oracle(&env)?);
    let greedy_return = expected_return(&env, &greedy)?;
    let schema = Schema::tabular(&env);
    let ev = PolicyEvaluator { env: &env, schema: &schema, fitness: FitnessConfig::default() };
    let cfg = EaConfig { population_size: 100, elitism: 1, generations: 200, seed, ..Default::default() };
    let run = evolve(&cfg, &schema, &ev, None::<fn(&Chromosome) -> bool>)?;
    let evolved = run.population.best_fitness()?;
    let first = run.history.iter().find(|s| s.best_fitness == reference::GRID_OPTIMUM).map(|s| s.generation);
    let lines = vec![
        format!("greedy policy {} return={greedy_return}", greedy.to_text(env.actions())),
        format!(
            "evolved best={evolved} first_optimal_generation={}",
            first.map_or("-".to_string(), |g| g.to_string())
        ),
    ];
    let passed = greedy_return == reference::GRID_OPTIMUM && evolved == reference::GRID_OPTIMUM;
    Ok(Report { lines, csv: None, passed })
}

/// Fitness of the complete example grid policies.
pub fn reproduce_grid_policies() -> Result<Report> {
    let env = make_grid_world();
    let mut lines = Vec::new();
    let mut passed = true;
    let mut csv = String::from("policy,genes,fitness,expected\n");
    for (id, genes, expected) in reference::GRID_POLICIES {
        let p = TabularPolicy::parse(genes, env.actions())?;
        let f = expected_return(&env, &p)?;
        passed &= f == expected;
        lines.push(format!("policy {id} {genes} fitness={f} expected={expected}"));
        let _ = writeln!(csv, "{id},{genes},{f},{expected}");
    }
    Ok(Report { lines, csv: Some(csv), passed })
}

/// Expected return of every hidden-world policy.
pub fn hidden_policy_table(env: &Environment) -> Result<Vec<(TabularPolicy, f64)>> {
    enumerate_policies_bounded(env, DEFAULT_ENUMERATION_LIMIT)?
        .into_iter()
        .map(|p| expected_return(env, &p).map(|f| (p, f)))
        .collect()
}

/// Brute-force policy table plus the converged Q-learner's greedy policy.
pub fn reproduce_hidden_policies(seed: u64) -> Result<Report> {
    let env = make_hidden_state_world();
    let table = hidden_policy_table(&env)?;
    let mut csv = String::from("red,green,blue,expected_return\n");
    let mut lines = Vec::new();
    for (p, f) in &table {
        let t: Vec<&str> = p.genes.iter().map(|&g| env.actions()[g].label.as_str()).collect();
        let _ = writeln!(csv, "{},{}", t.join(","), f);
        lines.push(format!("({}) -> {f}", t.join(",")));
    }
    let best = table.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let argmax: Vec<&TabularPolicy> = table.iter().filter(|e| e.1 == best).map(|e| &e.0).collect();
    let value_policy = table.iter().find(|e| e.0.genes == reference::HIDDEN_VALUE_POLICY).map(|e| e.1);
    let run = q_learning(&env, &TdConfig { seed, ..Default::default() })?;
    let greedy = greedy_policy(&run.q);
    lines.push(format!(
        "q-learning seed={seed}: Q(blue,L)={} Q(blue,R)={} greedy={}",
        run.q.get(2, 0),
        run.q.get(2, 1),
        greedy.to_text(env.actions())
    ));
    let passed = best == reference::HIDDEN_OPTIMUM
        && argmax.len() == 1
        && argmax[0].genes == reference::HIDDEN_OPTIMAL
        && value_policy == Some(reference::HIDDEN_VALUE_POLICY_RETURN)
        && greedy.genes == reference::HIDDEN_VALUE_POLICY;
    Ok(Report { lines, csv: Some(csv), passed })
}

/// Per-run outcome of the fraction-optimal experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionRun {
    pub seed: u64,
    pub history: Vec<GenerationStats>,
    pub final_best: f64,
}

/// Configuration used for the fraction-optimal experiment.
pub fn fraction_optimal_config(seed: u64) -> EaConfig {
    EaConfig {
        population_size: 50,
        crossover_prob: 0.8,
        mutation_rate: 0.01,
        selection: Selection::Tournament(2),
        generations: 50,
        seed,
        ..Default::default()
    }
}

/// Independent tabular EA runs on the hidden world, tracking the share of
/// each population equal to the optimal policy. Run `i` uses seed
/// `derive_seed(seed, [i])`; results are ordered by run.
pub fn fraction_optimal_runs(seed: u64, runs: usize) -> Result<Vec<FractionRun>> {
    let env = make_hidden_state_world();
    let schema = Schema::tabular(&env);
    let ev = PolicyEvaluator { env: &env, schema: &schema, fitness: FitnessConfig::default() };
    let optimal = |c: &Chromosome| c.as_discrete() == Some(&reference::HIDDEN_OPTIMAL[..]);
    (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, &[i]);
            let run = evolve(&fraction_optimal_config(s), &schema, &ev, Some(optimal))?;
            Ok(FractionRun { seed: s, final_best: run.population.best_fitness()?, history: run.history })
        })
        .collect()
}

pub fn reproduce_fraction_optimal(seed: u64, runs: usize) -> Result<(Report, Vec<FractionRun>)> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let results = fraction_optimal_runs(seed, runs)?;
    let gens = results[0].history.len();
    let cfg = fraction_optimal_config(seed);
    let mut csv = format!(
        "# experiment=figure14 env=hidden method=earl_tabular seed={seed} runs={runs} {}\n",
        ea_kv(&cfg)
    );
    csv.push_str("generation,mean_fraction_optimal,mean_best_fitness\n");
    let mut final_fraction = 0.0;
    for g in 0..gens {
        let frac = results.iter().map(|r| r.history[g].fraction_optimal.unwrap_or(0.0)).sum::<f64>() / runs as f64;
        let best = results.iter().map(|r| r.history[g].best_fitness).sum::<f64>() / runs as f64;
        let _ = writeln!(csv, "{g},{frac},{best}");
        final_fraction = frac;
    }
    let hits = results.iter().filter(|r| r.final_best == reference::HIDDEN_OPTIMUM).count();
    let need = (runs * 95).div_ceil(100);
    let lines = vec![
        format!("final mean fraction optimal={final_fraction} (need >= 0.6)"),
        format!("runs with best {}: {hits}/{runs} (need >= {need})", reference::HIDDEN_OPTIMUM),
    ];
    let passed = final_fraction >= 0.6 && hits >= need;
    Ok((Report { lines, csv: Some(csv), passed }, results))
}

/// Best memoryless return: greedy over the exact oracle when observations
/// identify states, otherwise brute force over tabular policies.
pub fn optimal_return(env: &Environment) -> Result<f64> {
    let distinct: BTreeSet<usize> = (0..env.num_states()).map(|s| env.observe(s).id).collect();
    if distinct.len() == env.num_states() {
        let q = value_iteration_oracle(env)?;
        let genes = (0..env.num_observations())
            .map(|o| {
                let s = (0..env.num_states()).find(|&s| env.observe(s).id == o).unwrap_or(0);
                q.greedy_action(s)
            })
            .collect();
        return expected_return(env, &TabularPolicy::new(genes));
    }
    let table = enumerate_policies_bounded(env, DEFAULT_ENUMERATION_LIMIT)?;
    table.iter().try_fold(f64::NEG_INFINITY, |m, p| Ok(m.max(expected_return(env, p)?)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvName {
    Grid,
    Hidden,
}

impl EnvName {
    pub fn build(self) -> Environment {
        match self {
            EnvName::Grid => make_grid_world(),
            EnvName::Hidden => make_hidden_state_world(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grid" => Some(EnvName::Grid),
            "hidden" => Some(EnvName::Hidden),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Grid => "grid",
            EnvName::Hidden => "hidden",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    EarlTabular,
    EarlRules,
    EarlNeural,
    Genitor,
    Sane,
    QLearn,
    Oracle,
}

impl Method {
    const ALL: [(Method, &'static str); 7] = [
        (Method::EarlTabular, "earl_tabular"),
        (Method::EarlRules, "earl_rules"),
        (Method::EarlNeural, "earl_neural"),
        (Method::Genitor, "genitor"),
        (Method::Sane, "sane"),
        (Method::QLearn, "qlearn"),
        (Method::Oracle, "oracle"),
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().find(|(_, n)| *n == s).map(|(m, _)| *m)
    }

    pub fn as_str(self) -> &'static str {
        Self::ALL.iter().find(|(m, _)| *m == self).map(|(_, n)| *n).expect("every method is named")
    }

    /// Config-key prefixes that apply to this method.
    fn sections(self) -> &'static [&'static str] {
        match self {
            Method::EarlTabular => &["ea.", "fitness."],
            Method::EarlRules => &["ea.", "rules.", "fitness."],
            Method::EarlNeural => &["ea.", "neural.", "fitness."],
            Method::Genitor => &["genitor.", "neural.", "fitness."],
            Method::Sane => &["sane.", "neural.", "fitness."],
            Method::QLearn => &["td."],
            Method::Oracle => &[],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    OneHot,
    Factored,
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub env: EnvName,
    pub method: Method,
    pub runs: usize,
    pub seed: u64,
    pub output: Option<String>,
    pub ea: EaConfig,
    pub fitness: FitnessConfig,
    pub num_rules: usize,
    pub max_rules: usize,
    pub lamarck: bool,
    pub default_action: Option<String>,
    pub hidden_size: usize,
    pub encoding: Encoding,
    pub genitor: GenitorConfig,
    pub sane: SaneConfig,
    pub td: TdConfig,
    /// Keys given explicitly; everything else is a default.
    pub explicit: BTreeSet<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "run".into(),
            env: EnvName::Hidden,
            method: Method::EarlTabular,
            runs: 1,
            seed: 0,
            output: None,
            ea: EaConfig::default(),
            fitness: FitnessConfig::default(),
            num_rules: 10,
            max_rules: 20,
            lamarck: false,
            default_action: None,
            hidden_size: 4,
            encoding: Encoding::OneHot,
            genitor: GenitorConfig::default(),
            sane: SaneConfig::default(),
            td: TdConfig::default(),
            explicit: BTreeSet::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidConfig(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("invalid value `{value}` for key `{key}`"))),
    }
}

fn parse_selection(key: &str, value: &str) -> Result<Selection> {
    if value == "proportional" {
        return Ok(Selection::Proportional);
    }
    if let Some(k) = value.strip_prefix("tournament") {
        let k = k.trim_start_matches([':', '(']).trim_end_matches(')');
        return Ok(Selection::Tournament(if k.is_empty() { 2 } else { parse_num(key, k)? }));
    }
    Err(Error::InvalidConfig(format!("invalid value `{value}` for key `{key}`")))
}

fn fmt_selection(s: Selection) -> String {
    match s {
        Selection::Proportional => "proportional".into(),
        Selection::Tournament(k) => format!("tournament:{k}"),
    }
}

fn ea_kv(ea: &EaConfig) -> String {
    format!(
        "ea.population_size={} ea.crossover_prob={} ea.mutation_rate={} ea.mutation_sigma={} ea.selection={} ea.elitism={} ea.immigrant_fraction={} ea.generations={}",
        ea.population_size,
        ea.crossover_prob,
        ea.mutation_rate,
        ea.mutation_sigma,
        fmt_selection(ea.selection),
        ea.elitism,
        ea.immigrant_fraction,
        ea.generations
    )
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys and malformed values are errors naming
    /// the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let invalid = || Error::InvalidConfig(format!("invalid value `{v}` for key `{key}`"));
        match key {
            "experiment" => self.experiment = v.to_string(),
            "env" => self.env = EnvName::parse(v).ok_or_else(invalid)?,
            "method" => self.method = Method::parse(v).ok_or_else(invalid)?,
            "runs" => {
                self.runs = parse_num(key, v)?;
                if self.runs == 0 {
                    return Err(invalid());
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "output" => self.output = Some(v.to_string()),
            "ea.population_size" => self.ea.population_size = parse_num(key, v)?,
            "ea.crossover_prob" => self.ea.crossover_prob = parse_num(key, v)?,
            "ea.mutation_rate" => self.ea.mutation_rate = parse_num(key, v)?,
            "ea.mutation_sigma" => self.ea.mutation_sigma = parse_num(key, v)?,
            "ea.selection" => self.ea.selection = parse_selection(key, v)?,
            "ea.elitism" => self.ea.elitism = parse_num(key, v)?,
            "ea.immigrant_fraction" => self.ea.immigrant_fraction = parse_num(key, v)?,
            "ea.generations" => self.ea.generations = parse_num(key, v)?,
            "fitness.trials" => self.fitness.trials = parse_num(key, v)?,
            "fitness.horizon" => self.fitness.horizon = parse_num(key, v)?,
            "fitness.discount" => {
                self.fitness.discount = parse_num(key, v)?;
                self.fitness.aggregation = if self.fitness.discount == 1.0 {
                    crate::credit::Aggregation::UndiscountedSum
                } else {
                    crate::credit::Aggregation::DiscountedSum
                };
            }
            "fitness.exact" => self.fitness.exact_expectation = parse_bool(key, v)?,
            "rules.num_rules" => self.num_rules = parse_num(key, v)?,
            "rules.max_rules" => self.max_rules = parse_num(key, v)?,
            "rules.operators" => {
                self.lamarck = match v {
                    "lamarck" => true,
                    "standard" | "none" => false,
                    _ => return Err(invalid()),
                }
            }
            "rules.default_action" => {
                self.default_action = if v == "none" { None } else { Some(v.to_string()) }
            }
            "neural.hidden_size" => self.hidden_size = parse_num(key, v)?,
            "neural.encoding" => {
                self.encoding = match v {
                    "one_hot" => Encoding::OneHot,
                    "factored" => Encoding::Factored,
                    _ => return Err(invalid()),
                }
            }
            "genitor.population_size" => self.genitor.population_size = parse_num(key, v)?,
            "genitor.selection" => self.genitor.selection = parse_selection(key, v)?,
            "genitor.delta" => self.genitor.delta = parse_num(key, v)?,
            "genitor.gene_min" => self.genitor.gene_min = parse_num(key, v)?,
            "genitor.gene_max" => self.genitor.gene_max = parse_num(key, v)?,
            "genitor.mutation_rate" => self.genitor.mutation_rate = parse_num(key, v)?,
            "genitor.mutation_sigma" => self.genitor.mutation_sigma = parse_num(key, v)?,
            "genitor.steps" => self.genitor.steps = parse_num(key, v)?,
            "sane.neuron_pop_size" => self.sane.neuron_pop_size = parse_num(key, v)?,
            "sane.blueprint_pop_size" => self.sane.blueprint_pop_size = parse_num(key, v)?,
            "sane.hidden_size" => self.sane.hidden_size = parse_num(key, v)?,
            "sane.elite_fraction" => self.sane.elite_fraction = parse_num(key, v)?,
            "sane.top_participation" => self.sane.top_participation = parse_num(key, v)?,
            "sane.mutation_rate" => self.sane.mutation_rate = parse_num(key, v)?,
            "sane.mutation_sigma" => self.sane.mutation_sigma = parse_num(key, v)?,
            "sane.ref_mutation_rate" => self.sane.ref_mutation_rate = parse_num(key, v)?,
            "sane.generations" => self.sane.generations = parse_num(key, v)?,
            "td.learning_rate" => {
                self.td.learning_rate = if v == "harmonic" {
                    LearningRate::Harmonic
                } else {
                    LearningRate::Fixed(parse_num(key, v)?)
                }
            }
            "td.epsilon" => self.td.epsilon = parse_num(key, v)?,
            "td.discount" => self.td.discount = parse_num(key, v)?,
            "td.episodes" => self.td.episodes = parse_num(key, v)?,
            "td.max_steps" => self.td.max_steps = parse_num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Parses flat `key = value` text; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Every key that applies to the chosen method, with resolved values.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.clone()),
            ("env".into(), self.env.as_str().into()),
            ("method".into(), self.method.as_str().into()),
            ("runs".into(), self.runs.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        let all: Vec<(&str, String)> = vec![
            ("ea.population_size", self.ea.population_size.to_string()),
            ("ea.crossover_prob", self.ea.crossover_prob.to_string()),
            ("ea.mutation_rate", self.ea.mutation_rate.to_string()),
            ("ea.mutation_sigma", self.ea.mutation_sigma.to_string()),
            ("ea.selection", fmt_selection(self.ea.selection)),
            ("ea.elitism", self.ea.elitism.to_string()),
            ("ea.immigrant_fraction", self.ea.immigrant_fraction.to_string()),
            ("ea.generations", self.ea.generations.to_string()),
            ("fitness.trials", self.fitness.trials.to_string()),
            ("fitness.horizon", self.fitness.horizon.to_string()),
            ("fitness.discount", self.fitness.discount.to_string()),
            ("fitness.exact", self.fitness.exact_expectation.to_string()),
            ("rules.num_rules", self.num_rules.to_string()),
            ("rules.max_rules", self.max_rules.to_string()),
            ("rules.operators", if self.lamarck { "lamarck" } else { "standard" }.into()),
            ("rules.default_action", self.default_action.clone().unwrap_or_else(|| "none".into())),
            ("neural.hidden_size", self.hidden_size.to_string()),
            (
                "neural.encoding",
                match self.encoding {
                    Encoding::OneHot => "one_hot",
                    Encoding::Factored => "factored",
                }
                .into(),
            ),
            ("genitor.population_size", self.genitor.population_size.to_string()),
            ("genitor.selection", fmt_selection(self.genitor.selection)),
            ("genitor.delta", self.genitor.delta.to_string()),
            ("genitor.gene_min", self.genitor.gene_min.to_string()),
            ("genitor.gene_max", self.genitor.gene_max.to_string()),
            ("genitor.mutation_rate", self.genitor.mutation_rate.to_string()),
            ("genitor.mutation_sigma", self.genitor.mutation_sigma.to_string()),
            ("genitor.steps", self.genitor.steps.to_string()),
            ("sane.neuron_pop_size", self.sane.neuron_pop_size.to_string()),
            ("sane.blueprint_pop_size", self.sane.blueprint_pop_size.to_string()),
            ("sane.hidden_size", self.sane.hidden_size.to_string()),
            ("sane.elite_fraction", self.sane.elite_fraction.to_string()),
            ("sane.top_participation", self.sane.top_participation.to_string()),
            ("sane.mutation_rate", self.sane.mutation_rate.to_string()),
            ("sane.mutation_sigma", self.sane.mutation_sigma.to_string()),
            ("sane.ref_mutation_rate", self.sane.ref_mutation_rate.to_string()),
            ("sane.generations", self.sane.generations.to_string()),
            (
                "td.learning_rate",
                match self.td.learning_rate {
                    LearningRate::Harmonic => "harmonic".into(),
                    LearningRate::Fixed(a) => a.to_string(),
                },
            ),
            ("td.epsilon", self.td.epsilon.to_string()),
            ("td.discount", self.td.discount.to_string()),
            ("td.episodes", self.td.episodes.to_string()),
            ("td.max_steps", self.td.max_steps.to_string()),
        ];
        let sections = self.method.sections();
        kv.extend(
            all.into_iter()
                .filter(|(k, _)| sections.iter().any(|s| k.starts_with(s)))
                .map(|(k, v)| (k.to_string(), v)),
        );
        kv
    }

    /// Applicable keys that were not set explicitly.
    pub fn defaulted(&self) -> Vec<String> {
        self.resolved()
            .into_iter()
            .map(|(k, _)| k)
            .filter(|k| !self.explicit.contains(k) && k.contains('.'))
            .collect()
    }

    /// Metadata lines that open every CSV.
    pub fn header_comment(&self) -> String {
        let kv: Vec<String> = self.resolved().into_iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut out = format!("# {}\n", kv.join(" "));
        let d = self.defaulted();
        if !d.is_empty() {
            let _ = writeln!(out, "# defaults: {}", d.join(" "));
        }
        out
    }

    fn default_action_id(&self, env: &Environment) -> Result<Option<usize>> {
        self.default_action
            .as_deref()
            .map(|l| {
                env.action_by_label(l)
                    .ok_or_else(|| Error::InvalidConfig(format!("invalid value `{l}` for key `rules.default_action`")))
            })
            .transpose()
    }

    fn input_encoding(&self, env: &Environment) -> InputEncoding {
        match self.encoding {
            Encoding::OneHot => InputEncoding::one_hot(env),
            Encoding::Factored => InputEncoding::factored(env),
        }
    }
}

/// Final summary of a configured run.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub best: f64,
    pub mean: f64,
    pub generations: u64,
    pub seed: u64,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "best={} mean={} generations={} seed={}", self.best, self.mean, self.generations, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub csv: String,
    pub summary: Summary,
}

struct MethodRun {
    rows: Vec<String>,
    final_best: f64,
    final_mean: f64,
    generations: u64,
}

fn history_rows(run: usize, history: &[GenerationStats]) -> Vec<String> {
    history.iter().map(|s| format!("{run},{}", s.csv_row())).collect()
}

fn last(history: &[GenerationStats]) -> (f64, f64) {
    history.last().map_or((f64::NAN, f64::NAN), |s| (s.best_fitness, s.mean_fitness))
}

fn run_method(cfg: &ExperimentConfig, env: &Environment, run: usize, seed: u64) -> Result<MethodRun> {
    let optimum = optimal_return(env);
    let exact = FitnessConfig { exact_expectation: true, trials: 1, ..cfg.fitness.clone() };
    let ea = EaConfig { seed, ..cfg.ea.clone() };
    let generations = ea.generations as u64;
    let evolved = |schema: &Schema| -> Result<MethodRun> {
        let optimum = *optimum.as_ref().map_err(Clone::clone)?;
        let ev = PolicyEvaluator { env, schema, fitness: cfg.fitness.clone() };
        let is_optimal = |c: &Chromosome| {
            decode(c, schema)
                .and_then(|p| crate::credit::evaluate_fitness(env, &p, &exact, &mut crate::rng::seeded(0)))
                .is_ok_and(|f| f >= optimum - 1e-9)
        };
        let r = evolve(&ea, schema, &ev, Some(is_optimal))?;
        let (final_best, final_mean) = last(&r.history);
        Ok(MethodRun { rows: history_rows(run, &r.history), final_best, final_mean, generations })
    };
    match cfg.method {
        Method::EarlTabular => evolved(&Schema::tabular(env)),
        Method::EarlNeural => {
            evolved(&Schema::neural(cfg.input_encoding(env), cfg.hidden_size, env.num_actions(), false))
        }
        Method::EarlRules => {
            let default_action = cfg.default_action_id(env)?;
            if !cfg.lamarck {
                // without covering, unmatched observations need a fallback
                return evolved(&Schema::rules(env, cfg.num_rules, default_action.or(Some(0))));
            }
            let lc = LamarckConfig {
                ea,
                num_rules: cfg.num_rules,
                max_rules: cfg.max_rules,
                horizon: cfg.fitness.horizon,
                operators: cfg.lamarck,
                default_action,
                ..Default::default()
            };
            let r = evolve_rule_sets(env, &lc)?;
            let (final_best, final_mean) = last(&r.history);
            Ok(MethodRun { rows: history_rows(run, &r.history), final_best, final_mean, generations })
        }
        Method::Genitor => {
            let optimum = optimum?;
            let schema = Schema::neural(cfg.input_encoding(env), cfg.hidden_size, env.num_actions(), true);
            let ev = PolicyEvaluator { env, schema: &schema, fitness: cfg.fitness.clone() };
            let gc = GenitorConfig { seed, ..cfg.genitor.clone() };
            let is_optimal = |c: &Chromosome| {
                decode(c, &schema)
                    .and_then(|p| crate::credit::evaluate_fitness(env, &p, &exact, &mut crate::rng::seeded(0)))
                    .is_ok_and(|f| f >= optimum - 1e-9)
            };
            let (_, history) = run_genitor(&gc, &schema, &ev, Some(is_optimal))?;
            let (final_best, final_mean) = last(&history);
            Ok(MethodRun { rows: history_rows(run, &history), final_best, final_mean, generations: gc.steps as u64 })
        }
        Method::Sane => {
            let sc = SaneConfig { seed, fitness: cfg.fitness.clone(), ..cfg.sane.clone() };
            let r = run_sane(env, &cfg.input_encoding(env), &sc)?;
            let rows = r.history.iter().map(|s| format!("{run},{}", s.csv_row())).collect();
            let s = r.history.last().expect("at least one generation");
            Ok(MethodRun { rows, final_best: s.best_fitness, final_mean: s.mean_fitness, generations: sc.generations as u64 })
        }
        Method::QLearn => {
            let td = TdConfig { seed, ..cfg.td.clone() };
            let r = q_learning(env, &td)?;
            let rows = r.returns.iter().enumerate().map(|(e, g)| format!("{run},{e},{g}")).collect();
            let greedy = expected_return(env, &greedy_policy(&r.q))?;
            let mean = r.returns.iter().sum::<f64>() / r.returns.len().max(1) as f64;
            Ok(MethodRun { rows, final_best: greedy, final_mean: mean, generations: td.episodes as u64 })
        }
        Method::Oracle => {
            let q = value_iteration_oracle(env)?;
            let (states, acts) = (
                (0..env.num_states()).map(|s| env.state_label(s)).collect::<Vec<_>>(),
                labels(env).1,
            );
            let rows = q.to_csv(&states, &acts).lines().skip(1).map(String::from).collect();
            let best = optimal_return(env)?;
            Ok(MethodRun { rows, final_best: best, final_mean: best, generations: 0 })
        }
    }
}

fn csv_header(cfg: &ExperimentConfig, env: &Environment) -> String {
    match cfg.method {
        Method::Sane => format!("run,{}", SaneStats::CSV_HEADER),
        Method::QLearn => "run,episode,return".into(),
        Method::Oracle => {
            let states: Vec<&str> = (0..env.num_states()).map(|s| env.state_label(s)).collect();
            format!("action,{}", states.join(","))
        }
        _ => format!("run,{}", GenerationStats::CSV_HEADER),
    }
}

/// Runs the configured method `runs` times (in parallel, run `i` seeded
/// with `derive_seed(seed, [i])`, or `seed` itself for a single run) and
/// renders the CSV with its metadata header.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    if cfg.runs == 0 {
        return Err(Error::InvalidConfig("invalid value `0` for key `runs`".into()));
    }
    let env = cfg.env.build();
    let runs = if cfg.method == Method::Oracle { 1 } else { cfg.runs };
    let results: Vec<MethodRun> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let seed = if runs == 1 { cfg.seed } else { derive_seed(cfg.seed, &[i as u64]) };
            run_method(cfg, &env, i, seed)
        })
        .collect::<Result<_>>()?;
    let mut csv = cfg.header_comment();
    csv.push_str(&csv_header(cfg, &env));
    csv.push('\n');
    for r in &results {
        for row in &r.rows {
            csv.push_str(row);
            csv.push('\n');
        }
    }
    let summary = Summary {
        best: results.iter().map(|r| r.final_best).fold(f64::NEG_INFINITY, f64::max),
        mean: results.iter().map(|r| r.final_mean).sum::<f64>() / results.len() as f64,
        generations: results[0].generations,
        seed: cfg.seed,
    };
    Ok(RunOutput { csv, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_reproductions_pass() {
        for name in ["q-table", "table2-fitness", "table5"] {
            let r = reproduce(name, 0, 1).unwrap();
            assert!(r.passed, "{name}: {:?}", r.lines);
        }
        assert!(matches!(reproduce("figure99", 0, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn optimal_returns() {
        assert_eq!(optimal_return(&make_grid_world()).unwrap(), 17.0);
        assert_eq!(optimal_return(&make_hidden_state_world()).unwrap(), 1.875);
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::parse("# comment\nenv = grid\nmethod = oracle  # trailing\n\nseed=3\n").unwrap();
        assert_eq!((cfg.env, cfg.method, cfg.seed), (EnvName::Grid, Method::Oracle, 3));
        let err = ExperimentConfig::parse("bogus = 1").unwrap_err();
        assert!(format!("{err}").contains("bogus"));
        let err = ExperimentConfig::parse("ea.mutation_rate = lots").unwrap_err();
        assert!(format!("{err}").contains("ea.mutation_rate"));
        assert!(ExperimentConfig::parse("runs = 0").is_err());
        let cfg = ExperimentConfig::parse("ea.selection = tournament:3\ntd.learning_rate = 0.5").unwrap();
        assert_eq!(cfg.ea.selection, Selection::Tournament(3));
        assert_eq!(cfg.td.learning_rate, LearningRate::Fixed(0.5));
    }

    #[test]
    fn oracle_run_writes_q_table() {
        let cfg = ExperimentConfig::parse("env = grid\nmethod = oracle").unwrap();
        let out = run_experiment(&cfg).unwrap();
        let lines: Vec<&str> = out.csv.lines().collect();
        assert!(lines[0].starts_with("# experiment=run env=grid method=oracle"));
        assert!(lines[1].starts_with("action,a1,a2"));
        assert!(lines[2].starts_with("R,17,16,10"));
        assert_eq!(out.summary.best, 17.0);
    }

    #[test]
    fn genitor_defaults_are_noted() {
        let cfg = ExperimentConfig::parse("method = genitor\ngenitor.steps = 100\ngenitor.population_size = 10").unwrap();
        let out = run_experiment(&cfg).unwrap();
        let defaults = out.csv.lines().nth(1).unwrap();
        assert!(defaults.starts_with("# defaults:"));
        assert!(defaults.contains("genitor.gene_min") && defaults.contains("genitor.gene_max"));
        assert!(!defaults.contains("genitor.steps"));
    }

    #[test]
    fn every_method_runs_on_both_worlds() {
        for env in ["grid", "hidden"] {
            for m in ["earl_tabular", "earl_rules", "earl_neural", "genitor", "sane", "qlearn", "oracle"] {
                let text = format!(
                    "env = {env}\nmethod = {m}\nea.generations = 3\nea.population_size = 10\ngenitor.steps = 30\n\
                     genitor.population_size = 10\nsane.generations = 3\ntd.episodes = 50\nruns = 2\n\
                     rules.operators = {}",
                    if env == "grid" { "lamarck" } else { "standard" }
                );
                let cfg = ExperimentConfig::parse(&text).unwrap();
                let out = run_experiment(&cfg).unwrap_or_else(|e| panic!("{env}/{m}: {e}"));
                assert!(out.summary.best.is_finite(), "{env}/{m}");
            }
        }
    }
}
