//! A small 1D convolutional network in f64: layers, forward pass with an
//! activation trace, and backpropagation.
//!
//! Activations are stored position-major: element `(pos, channel)` lives at
//! `pos * channels + channel`. Flattening after the last pool is therefore a
//! no-op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::DecisionDistribution;
use super::ModelError;
use crate::crypto::{canonical_digest, Digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub input_len: usize,
    pub convs: Vec<ConvSpec>,
    /// Max-pool window and stride after every conv.
    pub pool: usize,
    pub fc: Vec<usize>,
    pub outputs: usize,
    pub leak: f64,
    pub dropout: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Hyperparams {
    /// The loan network: three conv stages then two dense layers.
    pub fn loan_cnn() -> Hyperparams {
        Hyperparams {
            input_len: 88,
            convs: vec![
                ConvSpec { kernel: 5, filters: 50, stride: 1 },
                ConvSpec { kernel: 5, filters: 50, stride: 2 },
                ConvSpec { kernel: 2, filters: 60, stride: 2 },
            ],
            pool: 2,
            fc: vec![100, 50],
            outputs: 2,
            leak: 0.01,
            dropout: 0.10,
            l2: 0.01,
            batch_size: 100,
            learning_rate: 1e-4,
        }
    }

    /// Eight inputs, one conv stage, one dense output layer, no dropout.
    pub fn reduced() -> Hyperparams {
        Hyperparams {
            input_len: 8,
            convs: vec![ConvSpec { kernel: 3, filters: 3, stride: 1 }],
            pool: 2,
            fc: vec![],
            outputs: 2,
            leak: 0.01,
            dropout: 0.0,
            l2: 0.01,
            batch_size: 4,
            learning_rate: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::BadConfig(m.to_string()));
        if self.input_len == 0 || self.outputs < 2 || self.pool == 0 || self.batch_size == 0 {
            return bad("sizes must be positive and outputs at least 2");
        }
        if self.convs.iter().any(|c| c.kernel == 0 || c.filters == 0 || c.stride == 0) || self.fc.contains(&0) {
            return bad("layer sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || self.l2 < 0.0 || self.learning_rate <= 0.0 {
            return bad("dropout in [0,1), l2 >= 0 and learning rate > 0 required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv {
    pub len_in: usize,
    pub len_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    /// Indexed `[(j * c_in + ci) * c_out + co]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxPool {
    pub len_in: usize,
    pub len_out: usize,
    pub channels: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Indexed `[i * n_out + o]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Conv(Conv),
    MaxPool(MaxPool),
    LeakyRelu { slope: f64 },
    Dropout { rate: f64 },
    Dense(Dense),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "max_pool",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Dropout { .. } => "dropout",
            Layer::Dense(_) => "dense",
        }
    }
}

impl Conv {
    /// Zero padding so that `len_out = ceil(len_in / stride)`.
    fn same(len_in: usize, c_in: usize, spec: ConvSpec) -> Conv {
        let len_out = len_in.div_ceil(spec.stride);
        let pad_total = ((len_out - 1) * spec.stride + spec.kernel).saturating_sub(len_in);
        Conv {
            len_in,
            len_out,
            c_in,
            c_out: spec.filters,
            kernel: spec.kernel,
            stride: spec.stride,
            pad_left: pad_total / 2,
            weights: vec![0.0; spec.kernel * c_in * spec.filters],
            bias: vec![0.0; spec.filters],
        }
    }

    /// Input position read by output `o` at tap `j`, if inside the signal.
    #[inline]
    pub fn tap(&self, o: usize, j: usize) -> Option<usize> {
        (o * self.stride + j).checked_sub(self.pad_left).filter(|&p| p < self.len_in)
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        let co_n = self.c_out;
        for o in 0..self.len_out {
            let row = &mut out[o * co_n..(o + 1) * co_n];
            row.copy_from_slice(&self.bias);
            for j in 0..self.kernel {
                let Some(pos) = self.tap(o, j) else { continue };
                for ci in 0..self.c_in {
                    let a = input[pos * self.c_in + ci];
                    if a == 0.0 {
                        continue;
                    }
                    let w = &self.weights[(j * self.c_in + ci) * co_n..][..co_n];
                    for (r, &wv) in row.iter_mut().zip(w) {
                        *r += a * wv;
                    }
                }
            }
        }
    }

    fn backward(&self, input: &[f64], d_out: &[f64], d_in: Option<&mut [f64]>, gw: &mut [f64], gb: &mut [f64]) {
        let co_n = self.c_out;
        let mut d_in = d_in;
        for o in 0..self.len_out {
            let d = &d_out[o * co_n..(o + 1) * co_n];
            for (g, &dv) in gb.iter_mut().zip(d) {
                *g += dv;
            }
            for j in 0..self.kernel {
                let Some(pos) = self.tap(o, j) else { continue };
                for ci in 0..self.c_in {
                    let idx = pos * self.c_in + ci;
                    let off = (j * self.c_in + ci) * co_n;
                    if let Some(d_in) = d_in.as_deref_mut() {
                        let w = &self.weights[off..off + co_n];
                        d_in[idx] += w.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let a = input[idx];
                    if a != 0.0 {
                        for (g, &dv) in gw[off..off + co_n].iter_mut().zip(d) {
                            *g += a * dv;
                        }
                    }
                }
            }
        }
    }
}

impl MaxPool {
    fn forward(&self, input: &[f64], out: &mut [f64], argmax: &mut [usize]) {
        let c = self.channels;
        for p in 0..self.len_out {
            for ch in 0..c {
                let mut best = (p * self.window) * c + ch;
                for t in 1..self.window {
                    let idx = (p * self.window + t) * c + ch;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out[p * c + ch] = input[best];
                argmax[p * c + ch] = best;
            }
        }
    }
}

impl Dense {
    fn forward(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (r, &w) in out.iter_mut().zip(&self.weights[i * self.n_out..(i + 1) * self.n_out]) {
                *r += a * w;
            }
        }
    }

    fn backward(&self, input: &[f64], d_out: &[f64], d_in: Option<&mut [f64]>, gw: &mut [f64], gb: &mut [f64]) {
        for (g, &d) in gb.iter_mut().zip(d_out) {
            *g += d;
        }
        let mut d_in = d_in;
        for (i, &a) in input.iter().enumerate() {
            let row = i * self.n_out..(i + 1) * self.n_out;
            if let Some(d_in) = d_in.as_deref_mut() {
                d_in[i] = self.weights[row.clone()].iter().zip(d_out).map(|(w, d)| w * d).sum();
            }
            if a != 0.0 {
                for (g, &d) in gw[row].iter_mut().zip(d_out) {
                    *g += a * d;
                }
            }
        }
    }
}

/// Per-layer inputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    pub acts: Vec<Vec<f64>>,
    /// Winning input index per pooled output, for pool layers.
    pub argmax: Vec<Vec<usize>>,
    /// Scale applied per unit by dropout layers (empty at inference).
    pub masks: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

/// Gradients laid out like [`ModelConfig::tensors`].
pub type Grads = Vec<Vec<f64>>;

/// Architecture, trained parameters and the seed they were initialized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hyper: Hyperparams,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

impl ModelConfig {
    /// Builds the layer stack with fan-in scaled uniform weights and zero biases.
    pub fn new(hyper: Hyperparams, seed: u64) -> Result<ModelConfig, ModelError> {
        hyper.validate()?;
        let mut layers = Vec::new();
        let (mut len, mut ch) = (hyper.input_len, 1);
        for &spec in &hyper.convs {
            let conv = Conv::same(len, ch, spec);
            (len, ch) = (conv.len_out, conv.c_out);
            layers.push(Layer::Conv(conv));
            layers.push(Layer::LeakyRelu { slope: hyper.leak });
            let pooled = len / hyper.pool;
            if pooled == 0 {
                return Err(ModelError::BadConfig(format!("signal of length {len} cannot be pooled by {}", hyper.pool)));
            }
            layers.push(Layer::MaxPool(MaxPool { len_in: len, len_out: pooled, channels: ch, window: hyper.pool }));
            len = pooled;
        }
        let mut width = len * ch;
        for &n in &hyper.fc {
            layers.push(Layer::Dense(Dense { n_in: width, n_out: n, weights: vec![0.0; width * n], bias: vec![0.0; n] }));
            layers.push(Layer::LeakyRelu { slope: hyper.leak });
            if hyper.dropout > 0.0 {
                layers.push(Layer::Dropout { rate: hyper.dropout });
            }
            width = n;
        }
        layers.push(Layer::Dense(Dense {
            n_in: width,
            n_out: hyper.outputs,
            weights: vec![0.0; width * hyper.outputs],
            bias: vec![0.0; hyper.outputs],
        }));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut layers {
            let (w, fan_in) = match layer {
                Layer::Conv(c) => (&mut c.weights, c.kernel * c.c_in),
                Layer::Dense(d) => (&mut d.weights, d.n_in),
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
        }
        Ok(ModelConfig { hyper, seed, layers })
    }

    pub fn loan_cnn(seed: u64) -> ModelConfig {
        ModelConfig::new(Hyperparams::loan_cnn(), seed).expect("built-in architecture is valid")
    }

    /// Output length of every layer, in layer order, as `(name, positions, channels)`.
    /// Dense layers report one position.
    pub fn shape_trace(&self) -> Vec<(&'static str, usize, usize)> {
        let mut trace = vec![("input", self.hyper.input_len, 1)];
        let mut last = (self.hyper.input_len, 1);
        for layer in &self.layers {
            last = match layer {
                Layer::Conv(c) => (c.len_out, c.c_out),
                Layer::MaxPool(p) => (p.len_out, p.channels),
                Layer::Dense(d) => (1, d.n_out),
                _ => last,
            };
            trace.push((layer.name(), last.0, last.1));
        }
        trace
    }

    pub fn input_len(&self) -> usize {
        self.hyper.input_len
    }

    /// Trainable tensors: weights then bias for each conv and dense layer.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weights, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weights, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weights, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weights, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Grads {
        self.tensors().iter().map(|t| vec![0.0; t.len()]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Sum of squared weights per layer, biases excluded.
    pub fn weight_square_sum(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weights.iter().map(|w| w * w).sum(),
                Layer::Dense(d) => d.weights.iter().map(|w| w * w).sum(),
                _ => 0.0,
            })
            .sum()
    }

    pub fn zero_biases(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => c.bias.iter_mut().for_each(|b| *b = 0.0),
                Layer::Dense(d) => d.bias.iter_mut().for_each(|b| *b = 0.0),
                _ => {}
            }
        }
    }

    /// Runs the network, recording every layer input. Dropout is active only
    /// when `dropout_rng` is given.
    pub fn forward_trace(&self, x: &[f64], mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Trace, ModelError> {
        if x.len() != self.hyper.input_len {
            return Err(ModelError::ShapeMismatch { expected: self.hyper.input_len, got: x.len() });
        }
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut argmax = vec![Vec::new(); n];
        let mut masks = vec![Vec::new(); n];
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &acts[i];
            let out = match layer {
                Layer::Conv(c) => {
                    let mut out = vec![0.0; c.len_out * c.c_out];
                    c.forward(input, &mut out);
                    out
                }
                Layer::MaxPool(p) => {
                    let mut out = vec![0.0; p.len_out * p.channels];
                    argmax[i] = vec![0; out.len()];
                    p.forward(input, &mut out, &mut argmax[i]);
                    out
                }
                Layer::LeakyRelu { slope } => input.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect(),
                Layer::Dropout { rate } => match dropout_rng.as_deref_mut() {
                    Some(rng) => {
                        let keep = 1.0 / (1.0 - rate);
                        masks[i] = input.iter().map(|_| if rng.gen::<f64>() >= *rate { keep } else { 0.0 }).collect();
                        input.iter().zip(&masks[i]).map(|(a, m)| a * m).collect()
                    }
                    None => input.clone(),
                },
                Layer::Dense(d) => {
                    let mut out = vec![0.0; d.n_out];
                    d.forward(input, &mut out);
                    out
                }
            };
            acts.push(out);
        }
        Ok(Trace { acts, argmax, masks })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_trace(x, None)?.acts.pop().expect("logits"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<DecisionDistribution, ModelError> {
        let p = softmax(&self.logits(x)?);
        Ok(DecisionDistribution { p_fund: p[0], p_reject: p[1] })
    }

    /// Backpropagates `d_logits` through `trace`, accumulating into `grads`.
    pub fn backward(&self, trace: &Trace, d_logits: &[f64], grads: &mut Grads) {
        let mut delta = d_logits.to_vec();
        let mut t = grads.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.acts[i];
            let need_input_grad = i > 0;
            delta = match layer {
                Layer::Conv(c) => {
                    t -= 2;
                    let (gw, gb) = split_pair(grads, t);
                    let mut d_in = vec![0.0; input.len()];
                    c.backward(input, &delta, need_input_grad.then_some(&mut d_in[..]), gw, gb);
                    d_in
                }
                Layer::Dense(d) => {
                    t -= 2;
                    let (gw, gb) = split_pair(grads, t);
                    let mut d_in = vec![0.0; input.len()];
                    d.backward(input, &delta, need_input_grad.then_some(&mut d_in[..]), gw, gb);
                    d_in
                }
                Layer::MaxPool(_) => {
                    let mut d_in = vec![0.0; input.len()];
                    for (&src, &d) in trace.argmax[i].iter().zip(&delta) {
                        d_in[src] += d;
                    }
                    d_in
                }
                Layer::LeakyRelu { slope } => {
                    input.iter().zip(&delta).map(|(&z, &d)| if z > 0.0 { d } else { slope * d }).collect()
                }
                Layer::Dropout { .. } => {
                    if trace.masks[i].is_empty() {
                        delta
                    } else {
                        delta.iter().zip(&trace.masks[i]).map(|(d, m)| d * m).collect()
                    }
                }
            };
        }
    }

    /// Digest of the canonical serialization.
    pub fn config_hash(&self) -> Result<Digest, ModelError> {
        canonical_digest(self).map_err(|e| ModelError::BadConfig(e.to_string()))
    }
}

fn split_pair(grads: &mut Grads, t: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads[t..t + 2].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loan_shape_trace() {
        let m = ModelConfig::loan_cnn(1);
        let shapes: Vec<(usize, usize)> = m
            .shape_trace()
            .into_iter()
            .filter(|(n, _, _)| !matches!(*n, "leaky_relu" | "dropout"))
            .map(|(_, l, c)| (l, c))
            .collect();
        assert_eq!(
            shapes,
            vec![(88, 1), (88, 50), (44, 50), (22, 50), (11, 50), (6, 60), (3, 60), (1, 100), (1, 50), (1, 2)]
        );
        let Layer::Dense(fc1) = &m.layers[9] else { panic!("expected dense after the last pool") };
        assert_eq!(fc1.n_in, 180);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = ModelConfig::loan_cnn(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x: Vec<f64> = (0..88).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let p = m.predict(&x).unwrap();
            assert!((p.p_fund + p.p_reject - 1.0).abs() <= 1e-9);
            assert!((0.0..=1.0).contains(&p.p_fund));
        }
        assert!(matches!(m.predict(&[0.0; 10]), Err(ModelError::ShapeMismatch { expected: 88, got: 10 })));
    }

    #[test]
    fn zero_parameters_give_even_odds() {
        let mut m = ModelConfig::loan_cnn(3);
        m.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        let p = m.predict(&[1.0; 88]).unwrap();
        assert_eq!((p.p_fund, p.p_reject), (0.5, 0.5));
    }

    #[test]
    fn inference_is_repeatable() {
        let m = ModelConfig::loan_cnn(5);
        let x: Vec<f64> = (0..88).map(|i| (i % 3) as f64).collect();
        assert_eq!(m.logits(&x).unwrap(), m.logits(&x).unwrap());
    }

    #[test]
    fn hash_resolves_small_perturbations() {
        let a = ModelConfig::loan_cnn(7);
        let mut b = a.clone();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.tensors_mut()[0][0] += 1e-6;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    }
}
