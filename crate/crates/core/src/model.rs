//! A small fully-connected classifier trained with manual backpropagation.
//!
//! Hidden layers use ReLU, the last layer is a linear class head. Row `k` of
//! the head together with bias `k` is the weight vector of class `k`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Input dimension, hidden widths, number of classes.
    pub layer_widths: Vec<usize>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(layer_widths: Vec<usize>, seed: u64) -> Self {
        Self { layer_widths, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::config(
                "network needs at least an input and an output width",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().unwrap_or(&0)
    }
}

/// One affine layer, weights stored row-major as `[outputs × inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.inputs..(k + 1) * self.inputs]
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b),
        );
    }
}

/// Parameters of the whole network (the "network state").
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Everything backpropagation needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Pre-activation of every layer; the last one is the logit vector.
    pub pre_activations: Vec<Vec<f64>>,
    /// ReLU output of every hidden layer.
    pub activations: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Input of the class head, the feature vector `f(x)`.
    pub fn features(&self) -> &[f64] {
        self.activations.last().unwrap_or(&self.input)
    }
}

/// Parameter gradients, same shapes as [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) -> Result<()> {
        if !same_shapes(&self.layers, &other.layers) {
            return Err(Error::input("gradient shapes differ"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(&mut a.weights, &b.weights, scale);
            axpy(&mut a.bias, &b.bias, scale);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= factor);
            l.bias.iter_mut().for_each(|b| *b *= factor);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
}

fn same_shapes(a: &[Layer], b: &[Layer]) -> bool {
    a.len() == b.len()
        && a
            .iter()
            .zip(b)
            .all(|(x, y)| x.inputs == y.inputs && x.outputs == y.outputs)
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
        .collect()
}

impl Network {
    /// Weights uniform in `±sqrt(6/fan_in)` (He uniform, i.e. `c·sqrt(3/fan_in)`
    /// with `c = sqrt(2)`), biases zero.
    pub fn init(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / inputs as f64).sqrt();
                let mut layer = Layer::zeros(inputs, outputs);
                layer
                    .weights
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-bound..bound));
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds a network from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::config("layer parameter length does not match its shape"));
            }
        }
        if layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(Error::config("consecutive layer widths do not chain"));
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn layer_widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn head(&self) -> &Layer {
        self.layers.last().expect("network has layers")
    }

    /// Weight row of class `k` in the head, plus its bias.
    pub fn class_weights(&self, k: usize) -> Result<(&[f64], f64)> {
        let head = self.head();
        if k >= head.outputs {
            return Err(Error::input(format!("class {k} out of range")));
        }
        Ok((head.row(k), head.bias[k]))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::input(format!(
                "input has dimension {}, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut pre_activations = Vec::with_capacity(n);
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { &activations[i - 1] };
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(x, &mut z);
            if i + 1 < n {
                activations.push(z.iter().map(|v| v.max(0.0)).collect());
            }
            pre_activations.push(z);
        }
        let logits = pre_activations[n - 1].clone();
        Ok((
            logits,
            ForwardTrace {
                input: input.to_vec(),
                pre_activations,
                activations,
            },
        ))
    }

    /// Forward pass without keeping intermediate values.
    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&x, &mut z);
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut x, &mut z);
        }
        Ok(x)
    }

    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &[f64]) -> Result<Gradients> {
        let n = self.layers.len();
        let shapes_ok = trace.input.len() == self.input_dim()
            && trace.pre_activations.len() == n
            && trace.activations.len() + 1 == n
            && trace
                .pre_activations
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == l.outputs);
        if !shapes_ok {
            return Err(Error::input("forward trace does not match this network"));
        }
        if grad_logits.len() != self.num_classes() {
            return Err(Error::input(format!(
                "gradient has {} entries, network has {} classes",
                grad_logits.len(),
                self.num_classes()
            )));
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_logits.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let x: &[f64] = if i == 0 {
                &trace.input
            } else {
                &trace.activations[i - 1]
            };
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                if d != 0.0 {
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(x).for_each(|(w, xi)| *w = d * xi);
                }
            }
            if i > 0 {
                let pre = &trace.pre_activations[i - 1];
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(&mut next, layer.row(o), d);
                    }
                }
                next.iter_mut()
                    .zip(pre)
                    .for_each(|(v, &z)| if z <= 0.0 { *v = 0.0 });
                delta = next;
            }
        }
        Ok(grads)
    }

    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::config("learning rate must be non-negative and finite"));
        }
        if !same_shapes(&self.layers, &grads.layers) {
            return Err(Error::input("gradient shapes do not match the network"));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            axpy(&mut l.weights, &g.weights, -learning_rate);
            axpy(&mut l.bias, &g.bias, -learning_rate);
        }
        Ok(())
    }

    pub fn predict(&self, input: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(input)?))
    }

    pub fn parameters(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Inverse of [`Network::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::input("parameter vector has the wrong length"));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"AFSNET\0\0";
const CHECKPOINT_VERSION: u32 = 1;

impl Network {
    /// Writes the binary checkpoint.
    ///
    /// Layout, all integers little-endian `u32`, all reals little-endian
    /// IEEE-754 `f64`:
    ///
    /// ```text
    /// magic "AFSNET\0\0" | version | layer count L
    /// L × { inputs | outputs | weights[outputs*inputs] row-major | bias[outputs] }
    /// ```
    pub fn write_checkpoint(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
            for x in l.weights.iter().chain(&l.bias) {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::input(format!("checkpoint: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let inputs = read_u32(&mut r)? as usize;
            let outputs = read_u32(&mut r)? as usize;
            let mut layer = Layer::zeros(inputs, outputs);
            for x in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated parameters"))?;
                *x = f64::from_le_bytes(b);
            }
            layers.push(layer);
        }
        Network::from_layers(layers)
    }
}
