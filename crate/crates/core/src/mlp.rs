//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat vector in canonical order: for each layer,
//! the weight matrix row-major (`out x in`) followed by the bias vector.
//! Gradients use the same ordering, so optimizers and gradient projection
//! can treat both as plain vectors.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

/// Flat gradient (or parameter-shaped) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|v| *v *= k);
    }

    pub fn add_scaled(&mut self, other: &Self, k: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
    }
}

/// Per-layer activations of one forward pass, input first.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    /// Start of each layer's weights in `params`.
    offsets: Vec<usize>,
}

impl MlpModel {
    /// Zero-initialized network.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Self {
        assert!(layer_sizes.len() >= 2, "need input and output sizes");
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        let mut n = 0;
        for w in layer_sizes.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: vec![0.0; n],
            offsets,
        }
    }

    /// Uniform `±sqrt(6 / (n_in + n_out))` weights and zero biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut m = Self::zeros(layer_sizes, activation);
        for l in 0..m.num_layers() {
            let (n_in, n_out) = (m.layer_sizes[l], m.layer_sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let off = m.offsets[l];
            for w in &mut m.params[off..off + n_in * n_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        m
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn clone_params(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn load_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: flat.len(),
            });
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &MlpModel, tau: f64) -> Result<()> {
        if source.params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: source.params.len(),
            });
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&source.params);
        } else if tau != 0.0 {
            for (p, s) in self.params.iter_mut().zip(&source.params) {
                *p = tau * s + (1.0 - tau) * *p;
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in 0..self.num_layers() {
            x = self.layer_forward(l, &x);
        }
        Ok(x)
    }

    fn layer_forward(&self, l: usize, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let off = self.offsets[l];
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        let hidden = l + 1 < self.num_layers();
        (0..n_out)
            .map(|j| {
                let row = &w[j * n_in..(j + 1) * n_in];
                let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if hidden {
                    self.activation.apply(z)
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layer_sizes.len());
        activations.push(input.to_vec());
        for l in 0..self.num_layers() {
            let next = self.layer_forward(l, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Backpropagates `d_output` through a recorded pass, accumulating the
    /// parameter gradient into `grad`. Returns the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grad: &mut GradientVector) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = d_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let a_in = &trace.activations[l];
            let w = &self.params[off..off + n_in * n_out];
            let g = &mut grad.0[off..off + n_in * n_out + n_out];
            let mut d_in = vec![0.0; n_in];
            for j in 0..n_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let g_row = &mut g[j * n_in..(j + 1) * n_in];
                for (gi, ai) in g_row.iter_mut().zip(a_in) {
                    *gi += dj * ai;
                }
                let w_row = &w[j * n_in..(j + 1) * n_in];
                for (di, wi) in d_in.iter_mut().zip(w_row) {
                    *di += dj * wi;
                }
            }
            for j in 0..n_out {
                g[n_in * n_out + j] += delta[j];
            }
            if l > 0 {
                for (d, a) in d_in.iter_mut().zip(a_in) {
                    *d *= self.activation.derivative_from_output(*a);
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Mean squared error `(1/N) sum ||f(x_k) - y_k||^2` and its exact gradient.
    pub fn backward_mse<X: AsRef<[f64]>, Y: AsRef<[f64]>>(
        &self,
        inputs: &[X],
        targets: &[Y],
    ) -> Result<(f64, GradientVector)> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let n = inputs.len() as f64;
        let mut grad = GradientVector::zeros(self.params.len());
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let y = y.as_ref();
            if y.len() != self.output_dim() {
                return Err(Error::ShapeMismatch {
                    expected: self.output_dim(),
                    actual: y.len(),
                });
            }
            let trace = self.forward_trace(x.as_ref())?;
            let d: Vec<f64> = trace.output().iter().zip(y).map(|(o, t)| o - t).collect();
            loss += d.iter().map(|v| v * v).sum::<f64>();
            let d_out: Vec<f64> = d.iter().map(|v| 2.0 * v / n).collect();
            self.backward(&trace, &d_out, &mut grad);
        }
        let loss = loss / n;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, grad))
    }

    /// Mean squared error without gradients.
    pub fn mse<X: AsRef<[f64]>, Y: AsRef<[f64]>>(&self, inputs: &[X], targets: &[Y]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut loss = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            let out = self.forward(x.as_ref())?;
            loss += out.iter().zip(y.as_ref()).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        }
        Ok(loss / inputs.len() as f64)
    }

    /// `params <- params - lr * grad`.
    pub fn sgd_step(&mut self, grad: &GradientVector, lr: f64) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        for (p, g) in self.params.iter_mut().zip(&grad.0) {
            *p -= lr * g;
        }
        Ok(())
    }

    /// Plain-text checkpoint: magic line, layer sizes, activation, parameters.
    pub fn to_text(&self) -> String {
        let mut s = String::from("llpl-mlp v1\n");
        let sizes: Vec<String> = self.layer_sizes.iter().map(|n| n.to_string()).collect();
        writeln!(s, "layer_sizes {}", sizes.join(" ")).unwrap();
        writeln!(s, "activation {}", self.activation.name()).unwrap();
        for p in &self.params {
            writeln!(s, "{p:e}").unwrap();
        }
        s
    }

    /// Parses a checkpoint produced by [`MlpModel::to_text`]; consumes lines
    /// from `lines` up to the last parameter.
    pub fn from_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> std::result::Result<Self, String> {
        let magic = lines.next().ok_or("empty checkpoint")?;
        if magic.trim() != "llpl-mlp v1" {
            return Err(format!("bad magic line `{magic}`"));
        }
        let sizes_line = lines.next().ok_or("missing layer_sizes")?;
        let sizes = sizes_line
            .strip_prefix("layer_sizes ")
            .ok_or("missing layer_sizes")?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err("invalid layer sizes".into());
        }
        let act = match lines.next().and_then(|l| l.strip_prefix("activation ")) {
            Some("tanh") => Activation::Tanh,
            Some("relu") => Activation::Relu,
            other => return Err(format!("bad activation {other:?}")),
        };
        let mut m = Self::zeros(&sizes, act);
        for p in m.params.iter_mut() {
            let line = lines.next().ok_or("truncated parameters")?;
            *p = line.trim().parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        }
        Ok(m)
    }
}

/// Per-feature standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<X: AsRef<[f64]>>(rows: &[X]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        format!("normalizer_mean {}\nnormalizer_std {}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> std::result::Result<Self, String> {
        let mut parse = |key: &str| -> std::result::Result<Vec<f64>, String> {
            let line = lines.next().ok_or(format!("missing {key}"))?;
            line.strip_prefix(key)
                .ok_or(format!("expected {key}"))?
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        };
        let mean = parse("normalizer_mean ")?;
        let std = parse("normalizer_std ")?;
        if mean.len() != std.len() {
            return Err("normalizer length mismatch".into());
        }
        Ok(Self { mean, std })
    }
}
