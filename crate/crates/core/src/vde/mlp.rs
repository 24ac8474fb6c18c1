//! Dense feed-forward network with hand-written reverse mode.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `u * sigmoid(u)`
    Swish,
    Tanh,
    Identity,
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

impl Activation {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Swish => u * sigmoid(u),
            Activation::Tanh => u.tanh(),
            Activation::Identity => u,
        }
    }

    pub fn derivative(self, u: f64) -> f64 {
        match self {
            Activation::Swish => {
                let s = sigmoid(u);
                s + u * s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights = (0..n_in * n_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            n_in,
            n_out,
            weights,
            bias: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.n_in).zip(&self.bias) {
            out.push(row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b);
        }
    }
}

/// Hidden layers use `activation`; the output layer is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Pre- and post-activation values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

impl Mlp {
    pub fn new_random<R: Rng>(widths: &[usize], activation: Activation, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Layer::glorot(w[0], w[1], rng))
            .collect();
        Self { activation, layers }
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Self {
        Self {
            activation,
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.n_out).unwrap_or(0)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.n_out));
        w
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.forward(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_tape(&self, x: &[f64], tape: &mut Tape) {
        tape.input.clear();
        tape.input.extend_from_slice(x);
        tape.pre.resize(self.layers.len(), Vec::new());
        tape.post.resize(self.layers.len(), Vec::new());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { &tape.input } else { &tape.post[i - 1] };
            let mut pre = std::mem::take(&mut tape.pre[i]);
            l.forward(input, &mut pre);
            let post = &mut tape.post[i];
            post.clear();
            if i < last {
                post.extend(pre.iter().map(|u| self.activation.apply(*u)));
            } else {
                post.extend_from_slice(&pre);
            }
            tape.pre[i] = pre;
        }
    }

    /// Accumulates parameter gradients into `grad` (flat, in
    /// [`Mlp::params`] order) and returns the gradient w.r.t. the input.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let offsets = self.offsets();
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            if i < last {
                for (d, u) in delta.iter_mut().zip(&tape.pre[i]) {
                    *d *= self.activation.derivative(*u);
                }
            }
            let input = if i == 0 { &tape.input } else { &tape.post[i - 1] };
            let (w_off, b_off) = offsets[i];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grad[w_off + o * l.n_in..w_off + (o + 1) * l.n_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
                grad[b_off + o] += d;
            }
            let mut prev = vec![0.0; l.n_in];
            for (row, d) in l.weights.chunks_exact(l.n_in).zip(&delta) {
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Jacobian row of output `k` w.r.t. the input.
    pub fn input_gradient(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward_tape(x, &mut tape);
        let mut d_out = vec![0.0; self.output_width()];
        d_out[k] = 1.0;
        let mut sink = vec![0.0; self.n_params()];
        self.backward(&tape, &d_out, &mut sink)
    }

    /// (weight offset, bias offset) of each layer in the flat parameter order.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                let b = off + l.weights.len();
                off = b + l.bias.len();
                (w, b)
            })
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}
