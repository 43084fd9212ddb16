//! Multilayer perceptron regressor.
//!
//! Hidden layers are affine maps followed by ReLU, the output layer is a
//! single affine unit with identity activation. Training minimizes
//!
//! ```text
//! loss(y_hat, y, W) = 1/2 (y_hat - y)^2 + alpha/2 * ||W||^2
//! ```
//!
//! by plain mini-batch gradient descent, where `||W||^2` sums the squared
//! entries of every weight matrix (biases are not penalized).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::Standardizer;
use crate::tx::{Features, LabeledExample, N_FEATURES};

/// Epochs without sufficient validation improvement before training stops.
pub const PATIENCE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("cannot train on an empty example set")]
    Empty,
    #[error("invalid MLP config: {0}")]
    InvalidConfig(&'static str),
    #[error("training diverged at epoch {epoch} (non-finite loss); lower the learning rate")]
    Diverged { epoch: usize },
    #[error("malformed weights: {0}")]
    MalformedWeights(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layer_sizes: Vec<usize>,
    pub l2_alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub early_stop_tolerance: f64,
    /// Share of the training examples held out to drive early stopping.
    pub validation_fraction: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layer_sizes: vec![64],
            l2_alpha: 1e-4,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            seed: 0,
            early_stop_tolerance: 1e-4,
            validation_fraction: 0.1,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.hidden_layer_sizes.is_empty() {
            return Err(MlpError::InvalidConfig("at least one hidden layer is required"));
        }
        if self.hidden_layer_sizes.contains(&0) {
            return Err(MlpError::InvalidConfig("hidden layers need at least one unit"));
        }
        if !(self.l2_alpha > 0.0 && self.l2_alpha.is_finite()) {
            return Err(MlpError::InvalidConfig("l2_alpha must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MlpError::InvalidConfig("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(MlpError::InvalidConfig("batch_size and max_epochs must be at least 1"));
        }
        if !(self.early_stop_tolerance >= 0.0) {
            return Err(MlpError::InvalidConfig("early_stop_tolerance must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(MlpError::InvalidConfig("validation_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.hidden_layer_sizes.len() {
            1 => "One hidden layer".to_string(),
            2 => "Two hidden layers".to_string(),
            3 => "Three hidden layers".to_string(),
            n => format!("{n} hidden layers"),
        }
    }
}

/// One, two and three hidden layers of 64 units; everything else default.
pub fn mlp_variants() -> Vec<MlpConfig> {
    (1..=3)
        .map(|depth| MlpConfig { hidden_layer_sizes: vec![64; depth], ..MlpConfig::default() })
        .collect()
}

/// Dense layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub layers: Vec<Layer>,
}

impl MlpWeights {
    /// All-zero network with the given hidden widths, 7 inputs and 1 output.
    pub fn zeros(hidden: &[usize]) -> Self {
        let mut widths = vec![N_FEATURES];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self { layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect() }
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let (Some(first), Some(last)) = (self.layers.first(), self.layers.last()) else {
            return Err(MlpError::MalformedWeights("no layers"));
        };
        if self.layers.len() < 2 {
            return Err(MlpError::MalformedWeights("at least one hidden layer is required"));
        }
        if first.inputs != N_FEATURES || last.outputs != 1 {
            return Err(MlpError::MalformedWeights("network must map 7 inputs to 1 output"));
        }
        for pair in self.layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(MlpError::MalformedWeights("layer widths do not chain"));
            }
        }
        for layer in &self.layers {
            if layer.inputs == 0 || layer.outputs == 0 {
                return Err(MlpError::MalformedWeights("empty layer"));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.biases.len() != layer.outputs {
                return Err(MlpError::MalformedWeights("parameter count does not match shape"));
            }
            if layer.weights.iter().chain(&layer.biases).any(|x| !x.is_finite()) {
                return Err(MlpError::MalformedWeights("non-finite parameter"));
            }
        }
        Ok(())
    }

    pub fn hidden_layer_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    /// Sum of squared weight-matrix entries.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum()
    }

    /// Flattened parameters: per layer, weights then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    /// Same shape as `self`, filled from a flat vector in [`Self::parameters`] order.
    pub fn with_parameters(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for layer in &mut out.layers {
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = it.next().expect("parameter vector too short");
            }
        }
        out
    }

    /// Pre-activation values of every hidden unit for input `x`.
    pub fn hidden_pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut act = x.to_vec();
        let mut z = Vec::new();
        let mut out = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.affine(&act, &mut z);
            out.push(z.clone());
            act = z.iter().map(|v| v.max(0.0)).collect();
        }
        out
    }
}

/// Glorot-uniform weights and zero biases.
pub fn init_mlp(config: &MlpConfig) -> MlpWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = MlpWeights::zeros(&config.hidden_layer_sizes);
    for layer in &mut weights.layers {
        let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    weights
}

pub fn forward(weights: &MlpWeights, x: &[f64]) -> f64 {
    let mut act = x.to_vec();
    let mut z = Vec::new();
    let last = weights.layers.len() - 1;
    for (k, layer) in weights.layers.iter().enumerate() {
        layer.affine(&act, &mut z);
        if k < last {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        std::mem::swap(&mut act, &mut z);
    }
    act[0]
}

pub fn loss(y_hat: f64, y: f64, weights: &MlpWeights, l2_alpha: f64) -> f64 {
    0.5 * (y_hat - y).powi(2) + 0.5 * l2_alpha * weights.weight_norm_sq()
}

/// Backpropagates the data term `1/2 (y_hat - y)^2` of one example, adding
/// its gradient into `grad`. Returns the network output.
fn accumulate_data_gradient(
    weights: &MlpWeights,
    x: &[f64],
    y: f64,
    grad: &mut MlpWeights,
    acts: &mut Vec<Vec<f64>>,
) -> f64 {
    acts.resize(weights.layers.len() + 1, Vec::new());
    acts[0].clear();
    acts[0].extend_from_slice(x);
    let last = weights.layers.len() - 1;
    for (k, layer) in weights.layers.iter().enumerate() {
        let (head, tail) = acts.split_at_mut(k + 1);
        layer.affine(&head[k], &mut tail[0]);
        if k < last {
            for v in &mut tail[0] {
                *v = v.max(0.0);
            }
        }
    }
    let y_hat = acts[last + 1][0];

    let mut delta = vec![y_hat - y];
    for k in (0..=last).rev() {
        let layer = &weights.layers[k];
        let g = &mut grad.layers[k];
        let input = &acts[k];
        for (o, &d) in delta.iter().enumerate() {
            g.biases[o] += d;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (gw, &a) in row.iter_mut().zip(input) {
                *gw += d * a;
            }
        }
        if k > 0 {
            // ReLU derivative, taking 0 at the kink: an input activation of 0
            // means the unit was inactive.
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for (n, &a) in next.iter_mut().zip(input) {
                if a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }
    y_hat
}

/// Loss of one example and its gradient with respect to every parameter.
pub fn loss_gradient(weights: &MlpWeights, x: &[f64], y: f64, l2_alpha: f64) -> (f64, MlpWeights) {
    let mut grad = MlpWeights { layers: weights.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() };
    let y_hat = accumulate_data_gradient(weights, x, y, &mut grad, &mut Vec::new());
    add_l2_gradient(weights, &mut grad, l2_alpha);
    (loss(y_hat, y, weights, l2_alpha), grad)
}

fn add_l2_gradient(weights: &MlpWeights, grad: &mut MlpWeights, l2_alpha: f64) {
    for (g, l) in grad.layers.iter_mut().zip(&weights.layers) {
        for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
            *gw += l2_alpha * w;
        }
    }
}

/// `weights -= learning_rate * grad`.
pub fn sgd_step(weights: &mut MlpWeights, grad: &MlpWeights, learning_rate: f64) {
    for (l, g) in weights.layers.iter_mut().zip(&grad.layers) {
        for (p, d) in l.weights.iter_mut().chain(l.biases.iter_mut()).zip(g.weights.iter().chain(&g.biases)) {
            *p -= learning_rate * d;
        }
    }
}

/// A trained network together with the input standardization it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub weights: MlpWeights,
    pub scaler: Standardizer,
    /// Mean training loss after each completed epoch.
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    /// Raw network output on standardized input, without the label floor.
    pub fn raw_predict(&self, x: &Features) -> f64 {
        forward(&self.weights, &self.scaler.transform(x))
    }

    pub fn predict(&self, x: &Features) -> f64 {
        self.raw_predict(x).max(1.0)
    }
}

fn mean_loss(weights: &MlpWeights, data: &[(Vec<f64>, f64)], l2_alpha: f64) -> f64 {
    let data_term = data
        .iter()
        .map(|(x, y)| 0.5 * (forward(weights, x) - y).powi(2))
        .sum::<f64>()
        / data.len() as f64;
    data_term + 0.5 * l2_alpha * weights.weight_norm_sq()
}

pub fn train_mlp(examples: &[LabeledExample], config: &MlpConfig) -> Result<MlpModel, MlpError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(MlpError::Empty);
    }
    let scaler = Standardizer::fit(examples.iter().map(|e| e.features.as_slice()), N_FEATURES);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5a_e5);
    let mut data: Vec<(Vec<f64>, f64)> = examples
        .iter()
        .map(|e| (scaler.transform(&e.features), e.label_blocks))
        .collect();
    data.shuffle(&mut rng);
    let n_valid = (config.validation_fraction * data.len() as f64).round() as usize;
    let (train, valid): (Vec<_>, Vec<_>) = if n_valid >= 1 && n_valid < data.len() {
        let valid = data.split_off(data.len() - n_valid);
        (data, valid)
    } else {
        (data, Vec::new())
    };

    let mut weights = init_mlp(config);
    let mut grad = MlpWeights::zeros(&config.hidden_layer_sizes);
    let mut acts = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_history = Vec::with_capacity(config.max_epochs);
    let mut best_valid = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            for layer in &mut grad.layers {
                layer.weights.iter_mut().for_each(|g| *g = 0.0);
                layer.biases.iter_mut().for_each(|g| *g = 0.0);
            }
            let mut batch_data = 0.0;
            for &i in batch {
                let (x, y) = &train[i];
                let y_hat = accumulate_data_gradient(&weights, x, *y, &mut grad, &mut acts);
                batch_data += 0.5 * (y_hat - y).powi(2);
            }
            let scale = 1.0 / batch.len() as f64;
            for layer in &mut grad.layers {
                layer.weights.iter_mut().chain(layer.biases.iter_mut()).for_each(|g| *g *= scale);
            }
            let batch_loss = batch_data * scale + 0.5 * config.l2_alpha * weights.weight_norm_sq();
            if !batch_loss.is_finite() {
                return Err(MlpError::Diverged { epoch });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            add_l2_gradient(&weights, &mut grad, config.l2_alpha);
            sgd_step(&mut weights, &grad, config.learning_rate);
        }
        let epoch_loss = epoch_loss / train.len() as f64;
        if !epoch_loss.is_finite() || weights.parameters().iter().any(|p| !p.is_finite()) {
            return Err(MlpError::Diverged { epoch });
        }
        loss_history.push(epoch_loss);

        let monitored = if valid.is_empty() {
            epoch_loss
        } else {
            mean_loss(&weights, &valid, config.l2_alpha)
        };
        if !monitored.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        if best_valid - monitored < config.early_stop_tolerance {
            stale += 1;
            if stale >= PATIENCE {
                break;
            }
        } else {
            stale = 0;
        }
        best_valid = best_valid.min(monitored);
    }

    Ok(MlpModel { config: config.clone(), weights, scaler, loss_history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(w1: [f64; 7], b1: f64, w2: f64, b2: f64) -> MlpWeights {
        MlpWeights {
            layers: vec![
                Layer { inputs: 7, outputs: 1, weights: w1.to_vec(), biases: vec![b1] },
                Layer { inputs: 1, outputs: 1, weights: vec![w2], biases: vec![b2] },
            ],
        }
    }

    #[test]
    fn init_bounds_and_determinism() {
        let config = MlpConfig::default();
        let a = init_mlp(&config);
        assert_eq!(a, init_mlp(&config));
        assert!(a.layers.iter().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let bound = (6.0f64 / 71.0).sqrt();
        assert!((bound - 0.2907).abs() < 1e-4);
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= bound));
        a.validate().unwrap();
    }

    #[test]
    fn forward_by_hand() {
        let zero = MlpWeights::zeros(&[4]);
        assert_eq!(forward(&zero, &[3.0; 7]), 0.0);

        let net = tiny([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, 1.0, 0.5);
        assert_eq!(forward(&net, &[-3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 0.5);
        assert_eq!(forward(&net, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 2.5);
    }

    #[test]
    fn loss_values() {
        let zero = MlpWeights::zeros(&[1]);
        assert_eq!(loss(1.0, 1.0, &zero, 0.1), 0.0);
        assert_eq!(loss(3.0, 1.0, &zero, 0.1), 2.0);
        let one_weight = tiny([2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, 0.0, 0.0);
        assert_eq!(loss(1.0, 1.0, &one_weight, 1.0), 2.0);
    }

    #[test]
    fn variants() {
        let v = mlp_variants();
        assert_eq!(v.len(), 3);
        assert_eq!(v.iter().map(|c| c.hidden_layer_sizes.len()).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(v.iter().all(|c| c.hidden_layer_sizes.iter().all(|&w| w == 64)));
    }

    #[test]
    fn config_validation() {
        let bad = MlpConfig { hidden_layer_sizes: vec![], ..MlpConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MlpConfig { l2_alpha: 0.0, ..MlpConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!(train_mlp(&[], &MlpConfig::default()), Err(MlpError::Empty));
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<_> = (0..64)
            .map(|i| LabeledExample { features: [i as f64; 7], label_blocks: 1.0 + (i * 37 % 11) as f64 })
            .collect();
        let config = MlpConfig { learning_rate: 1e3, max_epochs: 50, ..MlpConfig::default() };
        assert!(matches!(train_mlp(&data, &config), Err(MlpError::Diverged { .. })));
    }

    #[test]
    fn with_parameters_round_trip() {
        let w = init_mlp(&MlpConfig { hidden_layer_sizes: vec![3, 2], ..MlpConfig::default() });
        assert_eq!(w.with_parameters(&w.parameters()), w);
    }
}
