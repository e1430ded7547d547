//! Dense feed-forward classifier: ReLU hidden layers, a linear output layer,
//! softmax applied outside the layer stack. Forward passes cache every
//! layer's inputs and pre-activations because the relevance rules need them;
//! training is plain mini-batch SGD on softmax cross-entropy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{shuffle, Dataset};
use crate::error::{Error, Result};

/// Element-wise activation of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Shape and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("layer dimensions must be > 0".into()));
        }
        Ok(Self {
            input_dim,
            output_dim,
            activation,
        })
    }
}

/// One dense layer. Weights are row-major with shape
/// `(input_dim, output_dim)`: `weight(i, j)` connects input `i` to output
/// `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<f64>,
    biases: Vec<f64>,
    spec: LayerSpec,
}

impl Layer {
    pub fn from_parts(weights: Vec<f64>, biases: Vec<f64>, spec: LayerSpec) -> Result<Self> {
        if weights.len() != spec.input_dim * spec.output_dim {
            return Err(Error::DimensionMismatch {
                what: "layer weights",
                expected: spec.input_dim * spec.output_dim,
                actual: weights.len(),
            });
        }
        if biases.len() != spec.output_dim {
            return Err(Error::DimensionMismatch {
                what: "layer biases",
                expected: spec.output_dim,
                actual: biases.len(),
            });
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters"));
        }
        Ok(Self {
            weights,
            biases,
            spec,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    #[inline]
    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.weights[input * self.spec.output_dim + output]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn forward_into(&self, x: &[f64], pre: &mut Vec<f64>, post: &mut Vec<f64>) {
        pre.clear();
        post.clear();
        for j in 0..self.spec.output_dim {
            let mut z = self.biases[j];
            for (i, &xi) in x.iter().enumerate() {
                z += xi * self.weight(i, j);
            }
            pre.push(z);
            post.push(self.spec.activation.apply(z));
        }
    }
}

/// The full parameter set of a trained (or freshly initialized) network.
/// Immutable once built; forward passes on shared params may run
/// concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

impl NetworkParams {
    /// Validates the dimension chain and the rule that only the final layer
    /// may be linear.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::LayerChainMismatch {
                    layer: l,
                    output_dim: pair[0].output_dim(),
                    next_input_dim: pair[1].input_dim(),
                });
            }
            if pair[0].spec().activation == Activation::Linear {
                return Err(Error::InvalidConfig(format!(
                    "layer {l} is linear but only the final layer may be"
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Total number of weights and biases.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }
}

/// Class-probability vector: entries in `[0, 1]` summing to 1 (±1e-9).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    probabilities: Vec<f64>,
}

impl PredictionVector {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidConfig("empty prediction".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "prediction must be a probability simplex".into(),
            ));
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Most probable class; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate().skip(1) {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Probability of the most probable class.
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.argmax()]
    }
}

/// Everything a forward pass computed, layer by layer: the inputs each layer
/// saw, its pre-activations, the final post-activation, and the softmax
/// prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    layer_inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
    prediction: PredictionVector,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.layer_inputs.len()
    }

    /// Input activations of layer `l` (the network input for `l = 0`).
    pub fn layer_input(&self, l: usize) -> &[f64] {
        &self.layer_inputs[l]
    }

    pub fn pre_activation(&self, l: usize) -> &[f64] {
        &self.pre_activations[l]
    }

    /// Post-activation of the final layer (equal to its pre-activation when
    /// the final layer is linear).
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn prediction(&self) -> &PredictionVector {
        &self.prediction
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Runs `x` through the network, caching per-layer inputs and
/// pre-activations. The prediction is the softmax of the final layer's
/// pre-activation.
pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "network input",
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }

    let mut layer_inputs = Vec::with_capacity(params.layer_count());
    let mut pre_activations = Vec::with_capacity(params.layer_count());
    let mut current = x.to_vec();
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for layer in params.layers() {
        layer.forward_into(&current, &mut pre, &mut post);
        layer_inputs.push(current);
        pre_activations.push(pre.clone());
        current = post.clone();
    }
    let prediction = PredictionVector {
        probabilities: softmax(pre_activations.last().expect("at least one layer")),
    };
    Ok(ForwardTrace {
        layer_inputs,
        pre_activations,
        output: current,
        prediction,
    })
}

/// Training hyperparameters. The paper's training setup is unspecified, so
/// these are plain declared defaults rather than reproductions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier on the `sqrt(6 / (fan_in + fan_out))` initialization range.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidConfig("init scale must be positive".into()));
        }
        Ok(())
    }
}

/// Initializes a network with zero biases and uniform weights in
/// `[-s, s]`, `s = scale * sqrt(6 / (fan_in + fan_out))`. Deterministic per
/// seed.
pub fn init_network_scaled(specs: &[LayerSpec], seed: u64, scale: f64) -> Result<NetworkParams> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig("init scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        LayerSpec::new(spec.input_dim, spec.output_dim, spec.activation)?;
        let s = scale * (6.0 / (spec.input_dim + spec.output_dim) as f64).sqrt();
        let weights = (0..spec.input_dim * spec.output_dim)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        layers.push(Layer::from_parts(weights, vec![0.0; spec.output_dim], *spec)?);
    }
    NetworkParams::from_layers(layers)
}

/// [`init_network_scaled`] at scale 1.
pub fn init_network(specs: &[LayerSpec], seed: u64) -> Result<NetworkParams> {
    init_network_scaled(specs, seed, 1.0)
}

/// Gradient buffers shaped like a parameter set.
#[derive(Debug, Clone)]
struct Gradients {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(params: &NetworkParams) -> Self {
        Self {
            weights: params
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: params
                .layers()
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    fn reset(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }
}

/// Cross-entropy of one example, `-ln p(label)`, computed via a stable
/// log-sum-exp.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[label]
}

/// Accumulates the gradient of one example into `grads`; returns its loss.
fn backprop_example(
    params: &NetworkParams,
    trace: &ForwardTrace,
    label: usize,
    grads: &mut Gradients,
) -> f64 {
    let last = params.layer_count() - 1;
    let logits = trace.pre_activation(last);
    let probs = softmax(logits);

    // delta = dL/d(pre-activation) of the current layer.
    let mut delta: Vec<f64> = probs;
    delta[label] -= 1.0;

    for l in (0..params.layer_count()).rev() {
        let layer = &params.layers()[l];
        let inputs = trace.layer_input(l);
        for j in 0..layer.output_dim() {
            grads.biases[l][j] += delta[j];
            for i in 0..layer.input_dim() {
                grads.weights[l][i * layer.output_dim() + j] += inputs[i] * delta[j];
            }
        }
        if l > 0 {
            let below = &params.layers()[l - 1];
            let pre_below = trace.pre_activation(l - 1);
            let mut next_delta = vec![0.0; layer.input_dim()];
            for (i, nd) in next_delta.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &dj) in delta.iter().enumerate() {
                    acc += layer.weight(i, j) * dj;
                }
                *nd = acc * below.spec().activation.derivative(pre_below[i]);
            }
            delta = next_delta;
        }
    }
    cross_entropy(logits, label)
}

fn validate_training_data(params: &NetworkParams, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.feature_count() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "training features",
            expected: params.input_dim(),
            actual: dataset.feature_count(),
        });
    }
    let classes = params.output_dim();
    for &label in dataset.labels() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

/// Mini-batch SGD on softmax cross-entropy. Deterministic per seed; returns
/// the trained parameters and the mean training loss of each epoch.
pub fn fit_tracking_loss(
    params: NetworkParams,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<f64>)> {
    config.validate()?;
    validate_training_data(&params, dataset)?;

    let mut params = params;
    let mut grads = Gradients::zeros(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.reset();
            for &row in batch {
                let trace = forward(&params, &dataset.rows()[row])?;
                epoch_loss +=
                    backprop_example(&params, &trace, dataset.labels()[row], &mut grads);
            }
            let step = config.learning_rate / batch.len() as f64;
            for (l, layer) in params.layers.iter_mut().enumerate() {
                for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                    *w -= step * g;
                }
                for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
                    *b -= step * g;
                }
            }
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);
    }
    Ok((params, epoch_losses))
}

/// Trains and returns only the parameters; see [`fit_tracking_loss`].
pub fn fit(params: NetworkParams, dataset: &Dataset, config: &TrainConfig) -> Result<NetworkParams> {
    fit_tracking_loss(params, dataset, config).map(|(p, _)| p)
}

/// Fraction of dataset rows whose softmax argmax matches the label.
pub fn classification_accuracy(params: &NetworkParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for (row, &label) in dataset.rows().iter().zip(dataset.labels()) {
        if forward(params, row)?.prediction().argmax() == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Compares backprop gradients with central finite differences (step 1e-5)
/// on one example; returns the maximum relative error, where the error is
/// `|a - n| / max(1, |a|, |n|)`. Intended for small networks.
pub fn analytic_gradient_check(params: &NetworkParams, x: &[f64], label: usize) -> Result<f64> {
    if label >= params.output_dim() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: params.output_dim(),
        });
    }
    let trace = forward(params, x)?;
    let mut grads = Gradients::zeros(params);
    backprop_example(params, &trace, label, &mut grads);

    let loss_of = |p: &NetworkParams| -> Result<f64> {
        let t = forward(p, x)?;
        Ok(cross_entropy(t.pre_activation(p.layer_count() - 1), label))
    };

    const H: f64 = 1e-5;
    let mut max_err = 0.0f64;
    let mut check = |probe: &mut dyn FnMut(&mut NetworkParams, f64), analytic: f64| -> Result<()> {
        let mut plus = params.clone();
        probe(&mut plus, H);
        let mut minus = params.clone();
        probe(&mut minus, -H);
        let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * H);
        let err = (analytic - numeric).abs() / 1.0f64.max(analytic.abs()).max(numeric.abs());
        max_err = max_err.max(err);
        Ok(())
    };

    for l in 0..params.layer_count() {
        for k in 0..params.layers()[l].weights.len() {
            let analytic = grads.weights[l][k];
            check(&mut |p, h| p.layers[l].weights[k] += h, analytic)?;
        }
        for k in 0..params.layers()[l].biases.len() {
            let analytic = grads.biases[l][k];
            check(&mut |p, h| p.layers[l].biases[k] += h, analytic)?;
        }
    }
    Ok(max_err)
}
