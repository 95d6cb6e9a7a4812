//! Two-hidden-layer tanh perceptron with hand-written reverse-mode
//! gradients and an Adam optimizer.
//!
//! `input → tanh(hidden) → tanh(features) → linear head`. The second tanh
//! layer is the exported penultimate representation.

use rand::Rng;

use crate::metrics::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean softmax cross-entropy over integer labels.
    CrossEntropy,
    /// Mean squared error against a scalar target.
    SquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// Layer widths `[input, hidden, features, output]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub input: usize,
    pub hidden: usize,
    pub features: usize,
    pub output: usize,
}

/// Offsets of w1, b1, w2, b2, w3, b3 in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Shape {
    fn layout(&self) -> Layout {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.features * self.hidden;
        let w3 = b2 + self.features;
        let b3 = w3 + self.output * self.features;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + self.output,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: Shape,
    params: Vec<f64>,
}

/// Activations retained for the backward pass.
struct Trace {
    hidden: Vec<f64>,
    features: Vec<f64>,
    output: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(shape: Shape, rng: &mut R) -> Self {
        let l = shape.layout();
        let mut params = vec![0.0; l.len];
        let mut fill = |start: usize, fan_out: usize, fan_in: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[start..start + fan_out * fan_in] {
                *p = (rng.random::<f64>() * 2.0 - 1.0) * limit;
            }
        };
        fill(l.w1, shape.hidden, shape.input);
        fill(l.w2, shape.features, shape.hidden);
        fill(l.w3, shape.output, shape.features);
        Self { shape, params }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn head_weights(&self) -> &[f64] {
        let l = self.shape.layout();
        &self.params[l.w3..l.b3]
    }

    pub fn head_bias(&self) -> &[f64] {
        let l = self.shape.layout();
        &self.params[l.b3..l.len]
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let l = self.shape.layout();
        &mut self.params[l.b3..l.len]
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let s = self.shape;
        let l = s.layout();
        let p = &self.params;
        let mut hidden = vec![0.0; s.hidden];
        affine(&p[l.w1..l.b1], &p[l.b1..l.w2], x, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        let mut features = vec![0.0; s.features];
        affine(&p[l.w2..l.b2], &p[l.b2..l.w3], &hidden, &mut features);
        features.iter_mut().for_each(|v| *v = v.tanh());
        let mut output = vec![0.0; s.output];
        affine(&p[l.w3..l.b3], &p[l.b3..l.len], &features, &mut output);
        Trace {
            hidden,
            features,
            output,
        }
    }

    /// Penultimate activations.
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).features
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).output
    }

    fn sample_loss(output: &[f64], loss: Loss, target: Target) -> (f64, Vec<f64>) {
        match (loss, target) {
            (Loss::CrossEntropy, Target::Class(y)) => {
                let max = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = output.iter().map(|z| (z - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let value = sum.ln() + max - output[y];
                let grad = exps
                    .iter()
                    .enumerate()
                    .map(|(k, e)| e / sum - if k == y { 1.0 } else { 0.0 })
                    .collect();
                (value, grad)
            }
            (Loss::SquaredError, Target::Value(y)) => {
                let r = output[0] - y;
                (r * r, vec![2.0 * r])
            }
            _ => panic!("loss {loss:?} does not accept target {target:?}"),
        }
    }

    /// Mean loss over the batch.
    pub fn loss(&self, inputs: &[&[f64]], targets: &[Target], loss: Loss) -> f64 {
        let total: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| Self::sample_loss(&self.trace(x).output, loss, t).0)
            .sum();
        total / inputs.len() as f64
    }

    /// Mean loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &[&[f64]], targets: &[Target], loss: Loss) -> (f64, Vec<f64>) {
        let s = self.shape;
        let l = s.layout();
        let p = &self.params;
        let mut grad = vec![0.0; l.len];
        let mut total = 0.0;
        let scale = 1.0 / inputs.len() as f64;
        let mut d_feat = vec![0.0; s.features];
        let mut d_hidden = vec![0.0; s.hidden];
        for (x, &t) in inputs.iter().zip(targets) {
            let tr = self.trace(x);
            let (value, d_out) = Self::sample_loss(&tr.output, loss, t);
            total += value;

            // Head.
            d_feat.iter_mut().for_each(|v| *v = 0.0);
            for (k, &g) in d_out.iter().enumerate() {
                let g = g * scale;
                grad[l.b3 + k] += g;
                let w_row = &p[l.w3 + k * s.features..l.w3 + (k + 1) * s.features];
                let g_row = l.w3 + k * s.features;
                for j in 0..s.features {
                    grad[g_row + j] += g * tr.features[j];
                    d_feat[j] += g * w_row[j];
                }
            }
            // Feature layer.
            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..s.features {
                let dz = d_feat[j] * (1.0 - tr.features[j] * tr.features[j]);
                grad[l.b2 + j] += dz;
                let row = l.w2 + j * s.hidden;
                for h in 0..s.hidden {
                    grad[row + h] += dz * tr.hidden[h];
                    d_hidden[h] += dz * p[row + h];
                }
            }
            // Hidden layer.
            for h in 0..s.hidden {
                let dz = d_hidden[h] * (1.0 - tr.hidden[h] * tr.hidden[h]);
                grad[l.b1 + h] += dz;
                let row = l.w1 + h * s.input;
                for (i, &xi) in x.iter().enumerate() {
                    grad[row + i] += dz * xi;
                }
            }
        }
        (total * scale, grad)
    }

    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(&self.forward(x))
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
