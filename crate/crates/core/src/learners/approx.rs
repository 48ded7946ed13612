//! Small dense networks with exact reverse-mode gradients and Adam.
//!
//! Parameters live in one flat row-major buffer: for each layer the weight
//! matrix (`out x in`) followed by the bias vector. Gradients use the same
//! layout, which keeps optimizers and checkpoints shape-agnostic.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commnet::Activation;

#[derive(Debug, Error, PartialEq)]
pub enum ApproxError {
    #[error("input has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths including input and output.
    pub sizes: Vec<usize>,
    /// One activation per layer transition.
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
}

/// Activations of every layer from one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl Mlp {
    /// Uniform Glorot initialization with zero biases.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        assert_eq!(activations.len(), sizes.len() - 1);
        let mut params = Vec::with_capacity(Self::count(sizes));
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let a = (6.0 / (n_in + n_out) as f64).sqrt();
            params.extend((0..n_in * n_out).map(|_| rng.gen_range(-a..a)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
        }
    }

    /// Single identity-weight layer of width `n`.
    pub fn identity(n: usize, activation: Activation) -> Self {
        let mut params = vec![0.0; n * n + n];
        for i in 0..n {
            params[i * n + i] = 1.0;
        }
        Self {
            sizes: vec![n, n],
            activations: vec![activation],
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offset of layer `l`'s weights; its bias follows at `+ in * out`.
    fn offset(&self, l: usize) -> usize {
        Self::count(&self.sizes[..=l])
    }

    /// Multiplies the last layer's weights by `factor`.
    pub fn scale_last_layer(&mut self, factor: f64) {
        let l = self.n_layers() - 1;
        let off = self.offset(l);
        let n = self.sizes[l] * self.sizes[l + 1];
        for w in &mut self.params[off..off + n] {
            *w *= factor;
        }
    }

    /// Adds `extra` zero-initialized output units to the last layer.
    pub fn append_outputs(&mut self, extra: usize) {
        let l = self.n_layers() - 1;
        let off = self.offset(l);
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let mut w = self.params[off..off + n_in * n_out].to_vec();
        let mut b = self.params[off + n_in * n_out..].to_vec();
        w.resize(n_in * (n_out + extra), 0.0);
        b.resize(n_out + extra, 0.0);
        self.params.truncate(off);
        self.params.extend(w);
        self.params.extend(b);
        self.sizes[l + 1] += extra;
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ApproxError> {
        let mut trace = self.forward_trace(x)?;
        Ok(trace.acts.pop().expect("trace holds the output"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, ApproxError> {
        if x.len() != self.in_dim() {
            return Err(ApproxError::DimensionMismatch {
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let act = self.activations[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = dot(row, input) + b[o];
                    act.apply(z)
                })
                .collect();
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Accumulates parameter gradients of `upstream · output` into `grad`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.n_params());
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offset(l);
            let act = self.activations[l];
            let out = &trace.acts[l + 1];
            let input = &trace.acts[l];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= act.derivative_from_output(y);
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g_row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, &x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
                for (nx, &wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *nx += d * wv;
                }
                grad[off + n_in * n_out + o] += d;
            }
            delta = next;
        }
        delta
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Scales `grad` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax restricted to `legal` actions; illegal entries get probability 0.
pub fn masked_softmax(logits: &[f64], legal: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = legal.iter().map(|&a| logits[a]).collect();
    let p = softmax(&sub);
    let mut out = vec![0.0; logits.len()];
    for (&a, pa) in legal.iter().zip(p) {
        out[a] = pa;
    }
    out
}

/// Inverse-CDF draw from `probs` with uniform `u`; falls back to the last
/// positive entry on rounding.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
