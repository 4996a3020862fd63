use crate::envs::{Environment, Observation};
use crate::error::{Error, Result};

use super::{Decision, DecisionPolicy};

/// How an observation becomes the network's input vector.
#[derive(Clone, Debug, PartialEq)]
pub enum InputEncoding {
    /// One input per observation id.
    OneHot { num_observations: usize },
    /// One one-hot block per sensor, sized by the sensor's bounds.
    Factored { sensor_bounds: Vec<(i64, i64)> },
}

impl InputEncoding {
    /// Factored per-sensor encoding (the default for multi-sensor worlds).
    pub fn factored(env: &Environment) -> Self {
        InputEncoding::Factored { sensor_bounds: env.sensor_bounds() }
    }

    pub fn one_hot(env: &Environment) -> Self {
        InputEncoding::OneHot { num_observations: env.num_observations() }
    }

    pub fn num_inputs(&self) -> usize {
        match self {
            InputEncoding::OneHot { num_observations } => *num_observations,
            InputEncoding::Factored { sensor_bounds } => {
                sensor_bounds.iter().map(|(lo, hi)| (hi - lo + 1) as usize).sum()
            }
        }
    }

    pub fn encode(&self, obs: &Observation) -> Vec<f64> {
        let mut x = vec![0.0; self.num_inputs()];
        match self {
            InputEncoding::OneHot { .. } => x[obs.id] = 1.0,
            InputEncoding::Factored { sensor_bounds } => {
                let mut offset = 0;
                for (&(lo, hi), &v) in sensor_bounds.iter().zip(&obs.sensors) {
                    x[offset + (v - lo) as usize] = 1.0;
                    offset += (hi - lo + 1) as usize;
                }
            }
        }
        x
    }
}

/// Weight count for a network with biases on both layers.
pub fn weight_count(num_inputs: usize, hidden_size: usize, num_actions: usize) -> usize {
    (num_inputs + 1) * hidden_size + (hidden_size + 1) * num_actions
}

/// Single-hidden-layer network, `tanh` hidden units, linear outputs.
///
/// `weights` holds, per hidden unit, its input weights followed by its bias,
/// then per action the hidden-to-output weights followed by the output bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralPolicy {
    pub encoding: InputEncoding,
    pub hidden_size: usize,
    pub num_actions: usize,
    pub weights: Vec<f64>,
    pub crossover_gene: Option<f64>,
}

impl NeuralPolicy {
    pub fn new(
        encoding: InputEncoding,
        hidden_size: usize,
        num_actions: usize,
        weights: Vec<f64>,
        crossover_gene: Option<f64>,
    ) -> Result<Self> {
        let expected = weight_count(encoding.num_inputs(), hidden_size, num_actions);
        if weights.len() != expected {
            return Err(Error::SchemaMismatch(format!(
                "network needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if let Some(g) = crossover_gene {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::SchemaMismatch(format!("crossover gene {g} outside [0, 1]")));
            }
        }
        Ok(NeuralPolicy { encoding, hidden_size, num_actions, weights, crossover_gene })
    }

    pub fn zeros(encoding: InputEncoding, hidden_size: usize, num_actions: usize) -> Self {
        let n = weight_count(encoding.num_inputs(), hidden_size, num_actions);
        NeuralPolicy { encoding, hidden_size, num_actions, weights: vec![0.0; n], crossover_gene: None }
    }

    fn output_offset(&self) -> usize {
        (self.encoding.num_inputs() + 1) * self.hidden_size
    }

    /// Index of the output bias for `action`.
    pub fn output_bias_index(&self, action: usize) -> usize {
        self.output_offset() + action * (self.hidden_size + 1) + self.hidden_size
    }

    pub fn outputs(&self, input: &[f64]) -> Vec<f64> {
        let n_in = input.len();
        let hidden: Vec<f64> = self.weights[..self.output_offset()]
            .chunks_exact(n_in + 1)
            .map(|row| {
                let (w, b) = row.split_at(n_in);
                (w.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b[0]).tanh()
            })
            .collect();
        self.weights[self.output_offset()..]
            .chunks_exact(self.hidden_size + 1)
            .map(|row| {
                let (v, c) = row.split_at(self.hidden_size);
                v.iter().zip(&hidden).map(|(v, h)| v * h).sum::<f64>() + c[0]
            })
            .collect()
    }

    pub fn act(&self, obs: &Observation) -> usize {
        let out = self.outputs(&self.encoding.encode(obs));
        let mut best = 0;
        for (a, &y) in out.iter().enumerate() {
            if y > out[best] {
                best = a;
            }
        }
        best
    }

    /// `hidden=H;gene=G;weights=w0,w1,...` (`gene=-` when absent).
    pub fn to_text(&self) -> String {
        let gene = self.crossover_gene.map_or("-".to_string(), |g| g.to_string());
        let w: Vec<String> = self.weights.iter().map(f64::to_string).collect();
        format!("hidden={};gene={};weights={}", self.hidden_size, gene, w.join(","))
    }

    pub fn parse(text: &str, encoding: InputEncoding, num_actions: usize) -> Result<Self> {
        let bad = |m: &str| Error::SchemaMismatch(format!("{m} in network text"));
        let mut hidden = None;
        let mut gene = None;
        let mut weights = None;
        for part in text.trim().split(';') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            match k {
                "hidden" => hidden = Some(v.parse::<usize>().map_err(|_| bad("bad hidden size"))?),
                "gene" if v == "-" => gene = Some(None),
                "gene" => gene = Some(Some(v.parse::<f64>().map_err(|_| bad("bad gene"))?)),
                "weights" => {
                    weights = Some(
                        v.split(',')
                            .filter(|s| !s.is_empty())
                            .map(|s| s.parse::<f64>().map_err(|_| bad("bad weight")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                _ => return Err(bad("unknown key")),
            }
        }
        NeuralPolicy::new(
            encoding,
            hidden.ok_or_else(|| bad("missing hidden"))?,
            num_actions,
            weights.ok_or_else(|| bad("missing weights"))?,
            gene.unwrap_or(None),
        )
    }
}

impl DecisionPolicy for NeuralPolicy {
    fn decide(&self, obs: &Observation) -> Result<Decision> {
        Ok(Decision::plain(self.act(obs)))
    }
}
