//! Dense feed-forward networks with one input and one output, trained by
//! mini-batch Adam on a weighted mean squared error.
//!
//! A [`SubNetwork`] is laid out as `Dense(1) -> Dense(h_1) -> ... -> Dense(h_k) -> Dense(1)`:
//! a linear 1x1 input layer, hidden layers using the configured activation and
//! a linear output layer. For `hidden = [1024]` that gives 2 + 2048 + 1025 = 3075
//! trainable parameters.
//!
//! Parameters are addressed in a flat order (layer by layer, weights row-major
//! then biases) shared by gradients and the Adam moment buffers.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GannError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation; ReLU uses 0 at z = 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
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

impl FromStr for Activation {
    type Err = GannError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(GannError::InvalidConfig(format!(
                "unsupported activation `{other}` (expected relu or linear)"
            ))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        })
    }
}

/// Glorot (Xavier) normal initialisation: i.i.d. `N(0, 2 / (fan_in + fan_out))`,
/// returned as a `fan_out x fan_in` row-major matrix.
pub fn glorot_normal_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    assert!(fan_in >= 1 && fan_out >= 1, "layer fans must be positive");
    Initializer::GlorotNormal.draw(fan_in, fan_out, fan_in * fan_out, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    GlorotNormal,
    Zeros,
}

impl Initializer {
    fn draw<R: Rng + ?Sized>(self, fan_in: usize, fan_out: usize, count: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Initializer::GlorotNormal => {
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite positive std");
                (0..count).map(|_| normal.sample(rng)).collect()
            }
            Initializer::Zeros => vec![0.0; count],
        }
    }
}

impl FromStr for Initializer {
    type Err = GannError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "glorot_normal" => Ok(Initializer::GlorotNormal),
            "zeros" => Ok(Initializer::Zeros),
            other => Err(GannError::NotImplemented(format!(
                "initializer `{other}` (supported: glorot_normal, zeros)"
            ))),
        }
    }
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Initializer::GlorotNormal => "glorot_normal",
            Initializer::Zeros => "zeros",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    fan_in: usize,
    fan_out: usize,
    /// `fan_out x fan_in`, row-major.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// Glorot-normal weights and zero biases.
    pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        Self::initialized(
            fan_in,
            fan_out,
            activation,
            Initializer::GlorotNormal,
            Initializer::Zeros,
            rng,
        )
    }

    pub fn initialized<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        kernel: Initializer,
        bias: Initializer,
        rng: &mut R,
    ) -> Self {
        let weights = kernel.draw(fan_in, fan_out, fan_in * fan_out, rng);
        let biases = bias.draw(fan_in, fan_out, fan_out, rng);
        DenseLayer {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        }
    }

    pub fn from_parts(
        fan_in: usize,
        fan_out: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(GannError::InvalidConfig("layer with zero width".into()));
        }
        if weights.len() != fan_in * fan_out || biases.len() != fan_out {
            return Err(GannError::InvalidConfig(format!(
                "layer {fan_in}->{fan_out} expects {} weights and {fan_out} biases, got {} and {}",
                fan_in * fan_out,
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(GannError::InvalidData("non-finite layer parameter".into()));
        }
        Ok(DenseLayer {
            fan_in,
            fan_out,
            weights,
            biases,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn forward_into(&self, input: &[f64], pre: &mut [f64], out: &mut [f64]) {
        for k in 0..self.fan_out {
            let row = &self.weights[k * self.fan_in..(k + 1) * self.fan_in];
            let z = row.iter().zip(input).fold(self.biases[k], |acc, (w, a)| acc + w * a);
            pre[k] = z;
            out[k] = self.activation.apply(z);
        }
    }
}

/// Gradient and loss of the weighted MSE over a set of samples.
#[derive(Clone, Debug)]
pub struct LossGradient {
    /// `sum w_i (t_i - y_i)^2 / sum w_i`, excluding any penalty.
    pub loss: f64,
    /// Gradient of loss plus L2 penalty, in flat parameter order.
    pub gradient: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    /// Coefficient of `sum W^2` over all weight matrices (biases excluded).
    pub l2_penalty: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 128,
            l2_penalty: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubNetwork {
    name: String,
    layers: Vec<DenseLayer>,
}

impl SubNetwork {
    /// Glorot-normal kernels and zero biases.
    pub fn new<R: Rng + ?Sized>(
        name: impl Into<String>,
        hidden_units: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_initializers(
            name,
            hidden_units,
            activation,
            Initializer::GlorotNormal,
            Initializer::Zeros,
            rng,
        )
    }

    pub fn with_initializers<R: Rng + ?Sized>(
        name: impl Into<String>,
        hidden_units: &[usize],
        activation: Activation,
        kernel: Initializer,
        bias: Initializer,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden_units.contains(&0) {
            return Err(GannError::InvalidConfig("num_units entries must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden_units.len() + 2);
        layers.push(DenseLayer::initialized(1, 1, Activation::Linear, kernel, bias, rng));
        let mut fan_in = 1;
        for &units in hidden_units {
            layers.push(DenseLayer::initialized(fan_in, units, activation, kernel, bias, rng));
            fan_in = units;
        }
        layers.push(DenseLayer::initialized(
            fan_in,
            1,
            Activation::Linear,
            kernel,
            bias,
            rng,
        ));
        Ok(SubNetwork {
            name: name.into(),
            layers,
        })
    }

    pub fn from_layers(name: impl Into<String>, layers: Vec<DenseLayer>) -> Result<Self> {
        let name = name.into();
        let bad = |msg: &str| Err(GannError::InvalidConfig(format!("network `{name}`: {msg}")));
        let (Some(first), Some(last)) = (layers.first(), layers.last()) else {
            return bad("no layers");
        };
        if first.fan_in != 1 {
            return bad("first layer must take one input");
        }
        if last.fan_out != 1 || last.activation != Activation::Linear {
            return bad("last layer must be a linear layer with one output");
        }
        if layers.windows(2).any(|w| w[0].fan_out != w[1].fan_in) {
            return bad("layer widths do not chain");
        }
        Ok(SubNetwork { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Widths of the layers between the 1x1 input layer and the output layer.
    pub fn hidden_units(&self) -> Vec<usize> {
        let n = self.layers.len();
        if n <= 2 {
            return Vec::new();
        }
        self.layers[1..n - 1].iter().map(|l| l.fan_out).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn max_width(&self) -> usize {
        self.layers.iter().map(|l| l.fan_out).max().unwrap_or(1).max(1)
    }

    /// Network output for a single input, without input validation.
    pub fn evaluate(&self, x: f64) -> f64 {
        let width = self.max_width();
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        let mut pre = vec![0.0; width];
        self.evaluate_with(x, &mut a, &mut b, &mut pre)
    }

    fn evaluate_with(&self, x: f64, a: &mut [f64], b: &mut [f64], pre: &mut [f64]) -> f64 {
        a[0] = x;
        let mut width = 1;
        let (mut cur, mut next) = (a, b);
        for layer in &self.layers {
            layer.forward_into(&cur[..width], &mut pre[..layer.fan_out], &mut next[..layer.fan_out]);
            width = layer.fan_out;
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    pub fn forward(&self, xs: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(GannError::InvalidData(format!(
                "non-finite input {} at row {i} for network `{}`",
                xs[i], self.name
            )));
        }
        let width = self.max_width();
        let mut a = vec![0.0; width];
        let mut b = vec![0.0; width];
        let mut pre = vec![0.0; width];
        Ok(xs
            .iter()
            .map(|&x| self.evaluate_with(x, &mut a, &mut b, &mut pre))
            .collect())
    }

    /// All parameters in flat order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(GannError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Weighted MSE and its gradient over the samples selected by `idx`.
    fn batch_gradient(
        &self,
        ws: &mut Workspace,
        x: &[f64],
        target: &[f64],
        weights: &[f64],
        idx: &[usize],
        l2_penalty: f64,
        grad: &mut [f64],
    ) -> (f64, f64) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let weight_sum: f64 = idx.iter().map(|&i| weights[i]).sum();
        if weight_sum <= 0.0 {
            return (0.0, 0.0);
        }
        let mut weighted_sse = 0.0;
        for &i in idx {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let out = ws.forward(self, x[i]);
            let resid = target[i] - out;
            weighted_sse += w * resid * resid;
            let dloss = -2.0 * (w / weight_sum) * resid;
            ws.backward(self, dloss, grad);
        }
        if l2_penalty > 0.0 {
            let mut offset = 0;
            for layer in &self.layers {
                for (g, w) in grad[offset..offset + layer.weights.len()]
                    .iter_mut()
                    .zip(&layer.weights)
                {
                    *g += 2.0 * l2_penalty * w;
                }
                offset += layer.param_count();
            }
        }
        (weighted_sse, weight_sum)
    }

    /// Loss and gradient of the weighted MSE over all samples (plus the L2
    /// penalty in the gradient).
    pub fn loss_gradient(&self, x: &[f64], target: &[f64], weights: &[f64], l2_penalty: f64) -> Result<LossGradient> {
        check_lengths(x, target, weights)?;
        let mut ws = Workspace::new(self);
        let mut gradient = vec![0.0; self.param_count()];
        let idx: Vec<usize> = (0..x.len()).collect();
        let (sse, wsum) = self.batch_gradient(&mut ws, x, target, weights, &idx, l2_penalty, &mut gradient);
        Ok(LossGradient {
            loss: if wsum > 0.0 { sse / wsum } else { 0.0 },
            gradient,
        })
    }

    /// One pass over the data in a shuffled order, one Adam update per
    /// mini-batch. Returns the weighted MSE accumulated over the batches, each
    /// batch evaluated just before its own update.
    pub fn train_one_epoch<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        target: &[f64],
        weights: &[f64],
        adam: &mut AdamState,
        options: &TrainOptions,
        rng: &mut R,
    ) -> Result<f64> {
        check_lengths(x, target, weights)?;
        if x.is_empty() {
            return Err(GannError::InvalidData("empty training set".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GannError::InvalidData(
                "sample weights must be finite and nonnegative".into(),
            ));
        }
        if options.batch_size == 0 {
            return Err(GannError::InvalidConfig("batch_size must be positive".into()));
        }
        if adam.len() != self.param_count() {
            return Err(GannError::InvalidConfig(format!(
                "optimizer state holds {} parameters but network `{}` has {}",
                adam.len(),
                self.name,
                self.param_count()
            )));
        }

        let mut order: Vec<usize> = (0..x.len()).collect();
        order.shuffle(rng);

        let mut ws = Workspace::new(self);
        let mut grad = vec![0.0; self.param_count()];
        let mut total_sse = 0.0;
        let mut total_weight = 0.0;
        for batch in order.chunks(options.batch_size) {
            let (sse, wsum) = self.batch_gradient(&mut ws, x, target, weights, batch, options.l2_penalty, &mut grad);
            if wsum <= 0.0 {
                continue;
            }
            if !sse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(GannError::NumericInstability {
                    term: self.name.clone(),
                });
            }
            total_sse += sse;
            total_weight += wsum;
            adam.update(&mut self.layers, &grad);
        }
        if total_weight <= 0.0 {
            return Err(GannError::InvalidData("sample weights sum to zero".into()));
        }
        Ok(total_sse / total_weight)
    }
}

fn check_lengths(x: &[f64], target: &[f64], weights: &[f64]) -> Result<()> {
    if x.len() != target.len() || x.len() != weights.len() {
        return Err(GannError::InvalidData(format!(
            "length mismatch: x={}, target={}, weights={}",
            x.len(),
            target.len(),
            weights.len()
        )));
    }
    Ok(())
}

/// Per-sample activation buffers for backpropagation.
struct Workspace {
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(net: &SubNetwork) -> Self {
        let mut acts = vec![vec![0.0; 1]];
        acts.extend(net.layers.iter().map(|l| vec![0.0; l.fan_out]));
        let width = net.max_width();
        Workspace {
            acts,
            pres: net.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            delta: vec![0.0; width],
            delta_prev: vec![0.0; width],
        }
    }

    fn forward(&mut self, net: &SubNetwork, x: f64) -> f64 {
        self.acts[0][0] = x;
        for (l, layer) in net.layers.iter().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            layer.forward_into(&head[l], &mut self.pres[l], &mut tail[0]);
        }
        self.acts[net.layers.len()][0]
    }

    /// Accumulates `dloss * d(output)/d(params)` into `grad`.
    fn backward(&mut self, net: &SubNetwork, dloss: f64, grad: &mut [f64]) {
        self.delta[0] = dloss;
        let mut offset = grad.len();
        for (l, layer) in net.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let (fan_in, fan_out) = (layer.fan_in, layer.fan_out);
            let input = &self.acts[l];
            let pre = &self.pres[l];
            for k in 0..fan_out {
                self.delta[k] *= layer.activation.derivative(pre[k]);
            }
            let (gw, gb) = grad[offset..offset + layer.param_count()].split_at_mut(fan_in * fan_out);
            for k in 0..fan_out {
                let dz = self.delta[k];
                if dz == 0.0 {
                    continue;
                }
                gb[k] += dz;
                for (g, a) in gw[k * fan_in..(k + 1) * fan_in].iter_mut().zip(input) {
                    *g += dz * a;
                }
            }
            if l == 0 {
                break;
            }
            let prev = &mut self.delta_prev[..fan_in];
            prev.iter_mut().for_each(|d| *d = 0.0);
            for k in 0..fan_out {
                let dz = self.delta[k];
                if dz == 0.0 {
                    continue;
                }
                for (d, w) in prev.iter_mut().zip(&layer.weights[k * fan_in..(k + 1) * fan_in]) {
                    *d += w * dz;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(GannError::InvalidConfig("learning_rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(GannError::InvalidConfig(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(GannError::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates for one network, in flat parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
        }
    }

    pub fn for_network(config: AdamConfig, net: &SubNetwork) -> Self {
        Self::new(config, net.param_count())
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Bias-corrected Adam update of a flat parameter slice.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.len());
        assert_eq!(grad.len(), self.len());
        self.step_count += 1;
        let (c1, c2) = self.bias_corrections();
        self.apply(params, grad, 0, c1, c2);
    }

    fn update(&mut self, layers: &mut [DenseLayer], grad: &[f64]) {
        self.step_count += 1;
        let (c1, c2) = self.bias_corrections();
        let mut offset = 0;
        for layer in layers {
            let nw = layer.weights.len();
            self.apply(&mut layer.weights, &grad[offset..offset + nw], offset, c1, c2);
            offset += nw;
            let nb = layer.biases.len();
            self.apply(&mut layer.biases, &grad[offset..offset + nb], offset, c1, c2);
            offset += nb;
        }
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step_count as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], offset: usize, c1: f64, c2: f64) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let m = &mut self.first_moment[offset..offset + params.len()];
        let v = &mut self.second_moment[offset..offset + params.len()];
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
