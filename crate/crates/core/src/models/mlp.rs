//! Fully connected rectifier network trained with the softplus loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReachabilityMap;
use crate::error::{Error, Result};
use crate::geometry::TaskSpace;
use crate::sampling::SampleSet;

/// `z = W a + b` with `W` stored row-major (`outputs × inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, a: &[f64], z: &mut Vec<f64>) {
        z.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            z.push(self.biases[o] + row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>());
        }
    }

    /// `Wᵀ δ`.
    fn backward(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, d) in delta.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (acc, w) in out.iter_mut().zip(row) {
                *acc += w * d;
            }
        }
        out
    }
}

/// Hidden layers use the rectifier, the output layer is linear. Inputs are
/// standardized with the training-set mean and spread before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub space: TaskSpace,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub layers: Vec<DenseLayer>,
    pub offset: f64,
}

impl MlpModel {
    pub fn from_parts(
        space: TaskSpace,
        input_shift: Vec<f64>,
        input_scale: Vec<f64>,
        layers: Vec<DenseLayer>,
        offset: f64,
    ) -> Result<Self> {
        let dim = space.input_dim();
        for (what, v) in [("input shift", &input_shift), ("input scale", &input_scale)] {
            if v.len() != dim {
                return Err(Error::Dimension {
                    what,
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        if layers.is_empty() {
            return Err(Error::InvalidData("MLP needs at least one layer".into()));
        }
        let mut width = dim;
        for layer in &layers {
            if layer.inputs != width
                || layer.weights.len() != layer.inputs * layer.outputs
                || layer.biases.len() != layer.outputs
                || layer.outputs == 0
            {
                return Err(Error::InvalidData(format!(
                    "inconsistent layer shape {}x{} after width {width}",
                    layer.outputs, layer.inputs
                )));
            }
            width = layer.outputs;
        }
        if width != 1 {
            return Err(Error::InvalidData(format!(
                "MLP output width must be 1, got {width}"
            )));
        }
        let finite = input_shift
            .iter()
            .chain(&input_scale)
            .chain(
                layers
                    .iter()
                    .flat_map(|l| l.weights.iter().chain(&l.biases)),
            )
            .all(|v| v.is_finite());
        if !finite || !offset.is_finite() {
            return Err(Error::InvalidData("non-finite MLP parameter".into()));
        }
        Ok(MlpModel {
            space,
            input_shift,
            input_scale,
            layers,
            offset,
        })
    }

    /// Widths of all layers, ending in 1.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.outputs).collect()
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_shift)
            .zip(&self.input_scale)
            .map(|((v, s), k)| (v - s) * k)
            .collect()
    }

    /// Pre-activations of every layer for one input.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut a = self.normalize(x);
        let mut zs = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward(&a, &mut z);
            if k + 1 < self.layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
            zs.push(z);
        }
        zs
    }

    /// Output without the offset.
    pub fn raw_value(&self, x: &[f64]) -> f64 {
        self.pre_activations(x).last().unwrap()[0]
    }

    /// Smallest absolute hidden pre-activation at `x`; gradients are exact
    /// away from zero.
    pub fn min_hidden_preactivation(&self, x: &[f64]) -> f64 {
        let zs = self.pre_activations(x);
        zs[..zs.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

impl ReachabilityMap for MlpModel {
    fn space(&self) -> TaskSpace {
        self.space
    }

    fn offset(&self) -> f64 {
        self.offset
    }

    fn value_unchecked(&self, x: &[f64]) -> f64 {
        self.raw_value(x) + self.offset
    }

    fn grad_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let zs = self.pre_activations(x);
        let mut delta = vec![1.0];
        for k in (0..self.layers.len()).rev() {
            let mut back = self.layers[k].backward(&delta);
            if k > 0 {
                for (d, z) in back.iter_mut().zip(&zs[k - 1]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = back;
        }
        delta
            .iter()
            .zip(&self.input_scale)
            .map(|(d, s)| d * s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths; a single linear output unit is appended.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub offset: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64, 32],
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            rng_seed: 0,
            offset: 0.0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden layer widths must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::InvalidConfig("offset must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpTrainReport {
    /// Mean training loss before the first epoch and after every epoch.
    pub loss_curve: Vec<f64>,
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Flattened parameter vector: per layer, weights then biases.
fn flatten(layers: &[DenseLayer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

fn unflatten(layers: &mut [DenseLayer], params: &[f64]) {
    let mut at = 0;
    for l in layers {
        let nw = l.weights.len();
        l.weights.copy_from_slice(&params[at..at + nw]);
        at += nw;
        let nb = l.biases.len();
        l.biases.copy_from_slice(&params[at..at + nb]);
        at += nb;
    }
}

/// Adds the parameter gradient of `softplus(−y f(x))` to `grad` and returns the loss.
fn accumulate(model: &MlpModel, x: &[f64], y: f64, grad: &mut [f64]) -> f64 {
    let a0 = model.normalize(x);
    let zs = model.pre_activations(x);
    let f = zs.last().unwrap()[0];
    let loss = softplus(-y * f);
    let mut delta = vec![-y * sigmoid(-y * f)];

    // Offsets of each layer's block in the flat vector.
    let mut offsets = Vec::with_capacity(model.layers.len());
    let mut at = 0;
    for l in &model.layers {
        offsets.push(at);
        at += l.weights.len() + l.biases.len();
    }

    for k in (0..model.layers.len()).rev() {
        let layer = &model.layers[k];
        let input: Vec<f64> = if k == 0 {
            a0.clone()
        } else {
            zs[k - 1].iter().map(|v| v.max(0.0)).collect()
        };
        let base = offsets[k];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut grad[base + o * layer.inputs..base + (o + 1) * layer.inputs];
            for (g, a) in row.iter_mut().zip(&input) {
                *g += d * a;
            }
            grad[base + layer.weights.len() + o] += d;
        }
        if k > 0 {
            let mut back = layer.backward(&delta);
            for (d, z) in back.iter_mut().zip(&zs[k - 1]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = back;
        }
    }
    loss
}

fn mean_loss(model: &MlpModel, data: &SampleSet) -> f64 {
    let total: f64 = data
        .rows()
        .map(|(x, l)| softplus(-f64::from(l) * model.raw_value(x)))
        .sum();
    total / data.len() as f64
}

/// Minibatch Adam on the mean softplus loss. Deterministic for a given seed.
pub fn train_mlp(data: &SampleSet, cfg: &MlpConfig) -> Result<(MlpModel, MlpTrainReport)> {
    cfg.validate()?;
    if !data.has_both_labels() {
        return Err(Error::InvalidData(
            "MLP training needs both labels; use the one-class SVM for positive-only data".into(),
        ));
    }
    let dim = data.dim();
    let n = data.len();
    let mut shift = vec![0.0; dim];
    let mut scale = vec![0.0; dim];
    for (x, _) in data.rows() {
        for k in 0..dim {
            shift[k] += x[k] / n as f64;
        }
    }
    for (x, _) in data.rows() {
        for k in 0..dim {
            scale[k] += (x[k] - shift[k]).powi(2) / n as f64;
        }
    }
    for s in scale.iter_mut() {
        *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut widths = vec![dim];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let layers: Vec<DenseLayer> = widths
        .windows(2)
        .map(|w| {
            let limit = (6.0 / w[0] as f64).sqrt();
            DenseLayer {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1])
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect(),
                biases: vec![0.0; w[1]],
            }
        })
        .collect();
    let mut model = MlpModel::from_parts(data.space, shift, scale, layers, cfg.offset)?;

    let mut params = flatten(&model.layers);
    let mut adam = Adam {
        m: vec![0.0; params.len()],
        v: vec![0.0; params.len()],
        t: 0,
        lr: cfg.learning_rate,
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; params.len()];
    let mut loss_curve = vec![mean_loss(&model, data)];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                accumulate(&model, data.input(i), f64::from(data.label(i)), &mut grad);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut params, &grad);
            unflatten(&mut model.layers, &params);
        }
        loss_curve.push(mean_loss(&model, data));
    }
    if loss_curve.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidData("MLP training diverged".into()));
    }
    Ok((model, MlpTrainReport { loss_curve }))
}
