//! Small fully connected network: tanh hidden layers, linear output, f64
//! parameters, hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyNet {
    sizes: Vec<usize>,
    /// `weights[l]` is row-major `sizes[l+1] x sizes[l]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &TinyNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    /// Parameters in the same order as [`TinyNet::param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Layer outputs of one forward pass; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    acts: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("at least the input")
    }
}

impl TinyNet {
    fn check_sizes(sizes: &[usize]) -> Result<(), RlError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(RlError::InvalidConfig(format!(
                "network sizes must have >= 2 positive entries, got {sizes:?}"
            )));
        }
        Ok(())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self, RlError> {
        Self::check_sizes(sizes)?;
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect());
        }
        let biases = sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, RlError> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            biases: sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// Zeroes the last layer, so the output starts at exactly zero for any
    /// input (a uniform softmax for policy heads).
    pub fn zero_output_layer(&mut self) {
        self.weights.last_mut().expect("validated").iter_mut().for_each(|w| *w = 0.0);
        self.biases.last_mut().expect("validated").iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for l in 0..self.weights.len() {
            if i < self.weights[l].len() {
                return (l, true, i);
            }
            i -= self.weights[l].len();
            if i < self.biases[l].len() {
                return (l, false, i);
            }
            i -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter order: layer by layer, weights then biases.
    pub fn param(&self, i: usize) -> f64 {
        match self.locate(i) {
            (l, true, j) => self.weights[l][j],
            (l, false, j) => self.biases[l][j],
        }
    }

    pub fn set_param(&mut self, i: usize, v: f64) {
        match self.locate(i) {
            (l, true, j) => self.weights[l][j] = v,
            (l, false, j) => self.biases[l][j] = v,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|x| x.is_finite())
    }

    pub fn forward_cache(&self, x: &[f64]) -> Activations {
        assert_eq!(x.len(), self.sizes[0], "input dimension");
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..=last {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let prev = &acts[l];
            let w = &self.weights[l];
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let z = self.biases[l][o] + w[o * n_in..(o + 1) * n_in].iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        Activations { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cache(x).acts.pop().expect("output layer")
    }

    /// Gradient of a scalar loss given its gradient with respect to the output.
    pub fn backward(&self, cache: &Activations, grad_out: &[f64]) -> Gradients {
        assert_eq!(grad_out.len(), self.output_dim(), "output gradient dimension");
        let mut g = Gradients::zeros_like(self);
        let mut delta = grad_out.to_vec();
        for l in (0..self.weights.len()).rev() {
            let n_in = self.sizes[l];
            let prev = &cache.acts[l];
            for (o, d) in delta.iter().enumerate() {
                g.biases[l][o] = *d;
                for (gw, a) in g.weights[l][o * n_in..(o + 1) * n_in].iter_mut().zip(prev) {
                    *gw = d * a;
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                delta = (0..n_in)
                    .map(|i| {
                        let back: f64 = delta.iter().enumerate().map(|(o, d)| w[o * n_in + i] * d).sum();
                        back * (1.0 - prev[i] * prev[i])
                    })
                    .collect();
            }
        }
        g
    }

    /// Plain gradient descent step: `theta -= lr * g`.
    pub fn apply(&mut self, g: &Gradients, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            w.iter_mut().zip(gw).for_each(|(p, d)| *p -= lr * d);
        }
        for (b, gb) in self.biases.iter_mut().zip(&g.biases) {
            b.iter_mut().zip(gb).for_each(|(p, d)| *p -= lr * d);
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Scalar losses supported by [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// `0.5 * |f(x) - target|^2`
    Squared { input: Vec<f64>, target: Vec<f64> },
    /// `-log softmax(f(x))[label]`
    CrossEntropy { input: Vec<f64>, label: usize },
}

impl LossSpec {
    fn input(&self) -> &[f64] {
        match self {
            LossSpec::Squared { input, .. } | LossSpec::CrossEntropy { input, .. } => input,
        }
    }

    /// Loss value and its gradient with respect to the network output.
    pub fn eval(&self, out: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossSpec::Squared { target, .. } => {
                let d: Vec<f64> = out.iter().zip(target).map(|(y, t)| y - t).collect();
                (0.5 * d.iter().map(|x| x * x).sum::<f64>(), d)
            }
            LossSpec::CrossEntropy { label, .. } => {
                let mut p = softmax(out);
                let loss = -p[*label].ln();
                p[*label] -= 1.0;
                (loss, p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub within_tolerance: bool,
}

/// Denominator floor for the relative error, so parameters whose true
/// gradient vanishes are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares backpropagated gradients with central differences for every
/// parameter. Relative error is `|a - n| / max(|a| + |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check(net: &TinyNet, loss: &LossSpec, tolerance: f64) -> Result<GradCheck, RlError> {
    if !net.is_finite() {
        return Err(RlError::NonFinite);
    }
    let input = loss.input();
    if input.len() != net.input_dim() {
        return Err(RlError::InvalidConfig("loss input does not match network input".into()));
    }
    match loss {
        LossSpec::Squared { target, .. } if target.len() != net.output_dim() => {
            return Err(RlError::InvalidConfig("target does not match network output".into()));
        }
        LossSpec::CrossEntropy { label, .. } if *label >= net.output_dim() => {
            return Err(RlError::InvalidConfig("label out of range".into()));
        }
        _ => {}
    }
    let cache = net.forward_cache(input);
    let (l0, g_out) = loss.eval(cache.output());
    if !l0.is_finite() {
        return Err(RlError::NonFinite);
    }
    let analytic = net.backward(&cache, &g_out).flat();
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(RlError::NonFinite);
    }
    let mut probe = net.clone();
    let mut max_err = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let p = net.param(i);
        probe.set_param(i, p + GRAD_CHECK_STEP);
        let (lp, _) = loss.eval(&probe.forward(input));
        probe.set_param(i, p - GRAD_CHECK_STEP);
        let (lm, _) = loss.eval(&probe.forward(input));
        probe.set_param(i, p);
        let numeric = (lp - lm) / (2.0 * GRAD_CHECK_STEP);
        if !numeric.is_finite() {
            return Err(RlError::NonFinite);
        }
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
        max_err = max_err.max(err);
    }
    Ok(GradCheck {
        max_relative_error: max_err,
        within_tolerance: max_err <= tolerance,
    })
}
