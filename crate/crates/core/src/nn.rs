//! Dense layers and small ReLU MLPs with hand-written backpropagation.
//!
//! Samples are rows: a layer maps `X (n x in)` to `X Wᵀ + 1 bᵀ (n x out)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::LabRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: Option<DVector<f64>>,
}

impl Dense {
    /// He-uniform weights, zero bias.
    pub fn init(input: usize, output: usize, bias: bool, rng: &mut LabRng) -> Self {
        let limit = (6.0 / input.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
        let w = DMatrix::from_fn(output, input, |_, _| dist.sample(rng));
        Self {
            w,
            b: bias.then(|| DVector::zeros(output)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: self.b.as_ref().map(|b| DVector::zeros(b.len())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.w.transpose();
        if let Some(b) = &self.b {
            for mut row in out.row_iter_mut() {
                row += b.transpose();
            }
        }
        out
    }

    /// Returns (layer gradient, gradient w.r.t. the input).
    pub fn backward(&self, x: &DMatrix<f64>, d_out: &DMatrix<f64>) -> (Dense, DMatrix<f64>) {
        let w = d_out.transpose() * x;
        let b = self.b.as_ref().map(|_| {
            DVector::from_iterator(d_out.ncols(), d_out.column_iter().map(|c| c.sum()))
        });
        (Dense { w, b }, d_out * &self.w)
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.as_ref().map_or(0, |b| b.len())
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend(self.w.iter());
        if let Some(b) = &self.b {
            out.extend(b.iter());
        }
    }

    fn read_flat(&mut self, src: &[f64]) -> usize {
        let n = self.w.len();
        self.w.copy_from_slice(&src[..n]);
        let mut used = n;
        if let Some(b) = &mut self.b {
            let m = b.len();
            b.copy_from_slice(&src[used..used + m]);
            used += m;
        }
        used
    }
}

/// Stack of dense layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn init(sizes: &[usize], bias: bool, rng: &mut LabRng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], bias, rng)).collect();
        Self {
            layers,
            activation: Activation::Relu,
        }
    }

    pub fn linear(input: usize, output: usize, bias: bool, rng: &mut LabRng) -> Self {
        Self::init(&[input, output], bias, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if i < last { z.map(|v| v.max(0.0)) } else { z.clone() };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    /// Gradients of all parameters and of the input, given `dL/d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &DMatrix<f64>) -> (Mlp, DMatrix<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                delta.zip_apply(&cache.pre[i], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let (g, dx) = self.layers[i].backward(&cache.inputs[i], &delta);
            grads.push(g);
            delta = dx;
        }
        grads.reverse();
        (
            Mlp {
                layers: grads,
                activation: self.activation,
            },
            delta,
        )
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.write_flat(&mut out);
        }
        out
    }

    /// Overwrites parameters from `src`; returns the number consumed.
    pub fn assign_flat(&mut self, src: &[f64]) -> usize {
        let mut used = 0;
        for l in &mut self.layers {
            used += l.read_flat(&src[used..]);
        }
        used
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let m = row.max();
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.apply(|v| *v -= lse);
    }
    out
}

/// Backward pass of `T = softmax(a)`: `da = T ⊙ (dT - <dT, T>)`.
pub fn softmax_backward(probs: &DMatrix<f64>, d_probs: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(probs.nrows(), probs.ncols());
    for i in 0..probs.nrows() {
        let dot: f64 = probs.row(i).dot(&d_probs.row(i));
        for j in 0..probs.ncols() {
            out[(i, j)] = probs[(i, j)] * (d_probs[(i, j)] - dot);
        }
    }
    out
}

/// Backward pass of `L = log_softmax(a)`: `da = dL - softmax(a) Σ dL`.
pub fn log_softmax_backward(probs: &DMatrix<f64>, d_logp: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = d_logp.clone();
    for i in 0..probs.nrows() {
        let s: f64 = d_logp.row(i).sum();
        for j in 0..probs.ncols() {
            out[(i, j)] -= probs[(i, j)] * s;
        }
    }
    out
}

/// Row-wise unit normalization, returning the norms for the backward pass.
pub fn normalize_rows(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.row_iter_mut() {
        let n = row.norm().max(1e-300);
        row /= n;
        norms.push(n);
    }
    (out, norms)
}

/// Backward pass of `y = x / |x|`: `dx = (dy - y <y, dy>) / |x|`.
pub fn normalize_rows_backward(y: &DMatrix<f64>, norms: &[f64], dy: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = dy.clone();
    for i in 0..y.nrows() {
        let dot = y.row(i).dot(&dy.row(i));
        for j in 0..y.ncols() {
            out[(i, j)] = (dy[(i, j)] - y[(i, j)] * dot) / norms[i];
        }
    }
    out
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    /// Decoupled weight decay: each step also shrinks parameters by
    /// `lr * weight_decay`.
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// Standard-normal draws normalized to the unit sphere in `R^d` (`d >= 2`),
/// or uniform on `[-1, 1]` when `d == 1`.
pub fn random_points(n: usize, d: usize, rng: &mut LabRng) -> DMatrix<f64> {
    if d == 1 {
        return DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..=1.0));
    }
    random_unit_rows(n, d, rng)
}

/// Standard-normal draws normalized to the unit sphere (rows).
pub fn random_unit_rows(n: usize, d: usize, rng: &mut LabRng) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    for mut row in m.row_iter_mut() {
        let nrm = row.norm().max(1e-300);
        row /= nrm;
    }
    m
}
