use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dense, gcn, readout, sage, topk};
use super::{xavier_normal, GraphBatch, NnError, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_features: usize,
    pub width: usize,
    pub n_sage: usize,
    pub n_gcn: usize,
    pub topk_ratio: f64,
    pub n_actions: usize,
}

/// Graph layers (SAGE then GCN), each followed by top-k pooling whose
/// `[mean | max]` readout is summed into a skip accumulator, then a two-layer
/// dense head producing one Q-value per action.
///
/// Parameter order: `W1, W2` per SAGE layer, `W` per GCN layer, one projection
/// per pooling step, then head `W1, b1, W2, b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub config: NetworkConfig,
    pub params: Vec<Array2<f64>>,
}

impl NetworkConfig {
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let w = self.width;
        let mut shapes = Vec::new();
        for l in 0..self.n_sage {
            let fan_in = if l == 0 { self.in_features } else { w };
            shapes.extend([(fan_in, w), (fan_in, w)]);
        }
        for l in 0..self.n_gcn {
            let fan_in = if l == 0 && self.n_sage == 0 {
                self.in_features
            } else {
                w
            };
            shapes.push((fan_in, w));
        }
        shapes.extend(std::iter::repeat_n((w, 1), self.n_sage + self.n_gcn));
        shapes.extend([(2 * w, w), (1, w), (w, self.n_actions), (1, self.n_actions)]);
        shapes
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.n_sage + self.n_gcn == 0
            || self.width == 0
            || self.in_features == 0
            || self.n_actions == 0
        {
            return Err(NnError::Shape(
                "network needs a graph layer and non-zero widths".into(),
            ));
        }
        if !(self.topk_ratio > 0.0 && self.topk_ratio <= 1.0) {
            return Err(NnError::Shape(format!(
                "pooling ratio {} outside (0, 1]",
                self.topk_ratio
            )));
        }
        Ok(())
    }
}

/// Records the forward pass with explicit parameters; output is `n_graphs × n_actions`.
pub fn forward(
    config: &NetworkConfig,
    params: &[Array2<f64>],
    tape: &mut Tape,
    input: &GraphBatch,
) -> Result<Var, NnError> {
    let shapes = config.param_shapes();
    if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.dim() != *s) {
        return Err(NnError::Shape(
            "parameter list does not match the configuration".into(),
        ));
    }
    let p: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, a)| tape.param(i, a))
        .collect();
    let n_layers = config.n_sage + config.n_gcn;
    let pool_base = 2 * config.n_sage + config.n_gcn;
    let mut x = tape.constant(input.x.clone());
    let mut graph = input.graph.clone();
    let mut skip: Option<Var> = None;
    for l in 0..n_layers {
        x = if l < config.n_sage {
            sage(tape, x, &graph, p[2 * l], p[2 * l + 1])?
        } else {
            gcn(tape, x, &graph, p[2 * config.n_sage + (l - config.n_sage)])?
        };
        let (pooled, sub, _) = topk(tape, x, &graph, p[pool_base + l], config.topk_ratio)?;
        x = pooled;
        graph = sub;
        let r = readout(tape, x, &graph)?;
        skip = Some(match skip {
            Some(s) => tape.add(s, r)?,
            None => r,
        });
    }
    let head = pool_base + n_layers;
    let h = dense(
        tape,
        skip.expect("at least one layer"),
        p[head],
        p[head + 1],
    )?;
    let h = tape.relu(h);
    dense(tape, h, p[head + 2], p[head + 3])
}

impl QNetwork {
    /// Xavier-normal initialization of every parameter, biases included.
    pub fn new(config: NetworkConfig, gain: f64, rng: &mut impl Rng) -> Result<Self, NnError> {
        config.validate()?;
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(r, c)| xavier_normal(r, c, gain, rng))
            .collect();
        Ok(QNetwork { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Array2<f64>>) -> Result<Self, NnError> {
        config.validate()?;
        let shapes = config.param_shapes();
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.dim() != *s) {
            return Err(NnError::Shape(
                "parameter list does not match the configuration".into(),
            ));
        }
        Ok(QNetwork { config, params })
    }

    pub fn forward(&self, tape: &mut Tape, input: &GraphBatch) -> Result<Var, NnError> {
        forward(&self.config, &self.params, tape, input)
    }

    /// Q-values, one row per graph in `input`.
    pub fn q_values(&self, input: &GraphBatch) -> Result<Array2<f64>, NnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, input)?;
        let q = tape.value(out).clone();
        if q.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("Q-values".into()));
        }
        Ok(q)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }
}
