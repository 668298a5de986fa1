//! Dense feed-forward networks with hand-written reverse-mode gradients and
//! an Adam optimizer. Used for the Koopman encoder/decoder and for the
//! DDPG actor, critic and their target copies.

mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::Matrix;

pub use checkpoint::{NetworkCheckpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
    /// `scale · tanh(x)`; bounds the output to `[−scale, scale]`.
    ScaledTanh { scale: f64 },
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::ScaledTanh { scale } => scale * x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::ScaledTanh { scale } => {
                let t = y / scale;
                scale * (1.0 - t * t)
            }
        }
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m_weights: Vec<Matrix>,
    pub v_weights: Vec<Matrix>,
    pub m_biases: Vec<Vec<f64>>,
    pub v_biases: Vec<Vec<f64>>,
}

impl AdamState {
    fn zeros_for(weights: &[Matrix], biases: &[Vec<f64>]) -> Self {
        let zw: Vec<Matrix> = weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        let zb: Vec<Vec<f64>> = biases.iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            step: 0,
            m_weights: zw.clone(),
            v_weights: zw,
            m_biases: zb.clone(),
            v_biases: zb,
        }
    }
}

/// Parameter gradients, one weight matrix and bias vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            w.as_mut_slice().iter_mut().zip(o.as_slice()).for_each(|(a, b)| *a += b);
        }
        for (w, o) in self.biases.iter_mut().zip(&other.biases) {
            w.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().map(Matrix::max_abs).fold(0.0, f64::max);
        self.biases.iter().flatten().fold(w, |m, v| m.max(v.abs()))
    }

    /// All entries flattened layer by layer (weights then biases).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    fn compatible_with(&self, net: &MlpNetwork) -> bool {
        self.weights.len() == net.weights.len()
            && self
                .weights
                .iter()
                .zip(&net.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self.biases.iter().zip(&net.biases).all(|(g, b)| g.len() == b.len())
    }
}

/// Layer outputs of a batched forward pass, kept for the backward pass.
/// Row `i` of every matrix belongs to sample `i`.
#[derive(Debug, Clone)]
pub struct BatchCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Matrix>,
}

impl BatchCache {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }
}

/// A fully connected network with per-layer activations.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    optimizer: AdamState,
}

impl MlpNetwork {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        Self::check_topology(layer_sizes, activations)?;
        let mut weights = Vec::with_capacity(activations.len());
        let mut biases = Vec::with_capacity(activations.len());
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)));
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(Self::from_parts(layer_sizes.to_vec(), activations.to_vec(), weights, biases))
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(layer_sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::check_topology(layer_sizes, activations)?;
        let weights = layer_sizes.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect();
        let biases = layer_sizes[1..].iter().map(|n| vec![0.0; *n]).collect();
        Ok(Self::from_parts(layer_sizes.to_vec(), activations.to_vec(), weights, biases))
    }

    /// Assembles a network from explicit parameters with fresh optimizer state.
    pub fn from_parameters(activations: &[Activation], weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() || weights.len() != activations.len() {
            return Err(invalid("layer count mismatch between weights, biases and activations"));
        }
        let mut sizes = vec![weights[0].cols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.cols() != *sizes.last().unwrap() || b.len() != w.rows() {
                return Err(invalid("inconsistent layer shapes"));
            }
            if !w.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite parameters"));
            }
            sizes.push(w.rows());
        }
        Ok(Self::from_parts(sizes, activations.to_vec(), weights, biases))
    }

    fn from_parts(layer_sizes: Vec<usize>, activations: Vec<Activation>, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Self {
        let optimizer = AdamState::zeros_for(&weights, &biases);
        Self {
            layer_sizes,
            activations,
            weights,
            biases,
            optimizer,
        }
    }

    fn check_topology(layer_sizes: &[usize], activations: &[Activation]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(invalid("a network needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(invalid("layer sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(invalid(format!(
                "{} activations for {} layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn optimizer_state(&self) -> &AdamState {
        &self.optimizer
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters flattened in the same order as [`GradientSet::flatten`].
    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    /// Mutable access to the `index`-th parameter in flattened order.
    pub fn parameter_mut(&mut self, mut index: usize) -> &mut f64 {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.rows() * w.cols();
            if index < nw {
                return &mut w.as_mut_slice()[index];
            }
            index -= nw;
            if index < b.len() {
                return &mut b[index];
            }
            index -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn same_architecture(&self, other: &MlpNetwork) -> bool {
        self.layer_sizes == other.layer_sizes && self.activations == other.activations
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_size() {
            return Err(invalid(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        let mut h = x.to_vec();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            h = (0..w.rows())
                .map(|o| act.apply(crate::numerics::dot(w.row(o), &h) + b[o]))
                .collect();
        }
        Ok(h)
    }

    /// Forward pass over a batch whose rows are samples.
    pub fn forward_batch(&self, xs: &Matrix) -> Result<BatchCache> {
        if xs.cols() != self.input_size() {
            return Err(invalid(format!(
                "batch has {} features, network expects {}",
                xs.cols(),
                self.input_size()
            )));
        }
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(xs.clone());
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = activations.last().unwrap().matmul_transposed(w);
            for i in 0..z.rows() {
                for (v, bias) in z.row_mut(i).iter_mut().zip(b) {
                    *v = act.apply(*v + bias);
                }
            }
            activations.push(z);
        }
        Ok(BatchCache { activations })
    }

    /// Reverse pass for `Σ_i upstream_iᵀ · output_i`. Returns parameter
    /// gradients summed over the batch and the per-sample input gradients.
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &Matrix) -> Result<(GradientSet, Matrix)> {
        let mut grads = GradientSet::zeros_like(self);
        let d_input = self.reverse(cache, upstream, Some(&mut grads))?;
        Ok((grads, d_input))
    }

    /// Per-sample input gradients only; skips parameter accumulation.
    pub fn input_gradient_batch(&self, cache: &BatchCache, upstream: &Matrix) -> Result<Matrix> {
        self.reverse(cache, upstream, None)
    }

    fn reverse(&self, cache: &BatchCache, upstream: &Matrix, mut grads: Option<&mut GradientSet>) -> Result<Matrix> {
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(invalid(format!(
                "upstream is {:?}, output is {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            let y = &cache.activations[l + 1];
            let act = self.activations[l];
            for (d, yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *d *= act.derivative_from_output(*yv);
            }
            if let Some(grads) = grads.as_deref_mut() {
                let input = &cache.activations[l];
                let gw = &mut grads.weights[l];
                let gb = &mut grads.biases[l];
                let n_in = input.cols();
                for s in 0..delta.rows() {
                    let drow = delta.row(s);
                    let xrow = input.row(s);
                    for (o, dv) in drow.iter().enumerate() {
                        if *dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        let grow = &mut gw.as_mut_slice()[o * n_in..(o + 1) * n_in];
                        for (g, xv) in grow.iter_mut().zip(xrow) {
                            *g += dv * xv;
                        }
                    }
                }
            }
            delta = delta.matmul(&self.weights[l]);
        }
        Ok(delta)
    }

    /// Single-sample reverse pass: gradients of `upstreamᵀ · forward(x)`
    /// with respect to the parameters and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(GradientSet, Vec<f64>)> {
        if upstream.len() != self.output_size() {
            return Err(invalid(format!(
                "upstream has length {}, network output is {}",
                upstream.len(),
                self.output_size()
            )));
        }
        if x.len() != self.input_size() {
            return Err(invalid("input length mismatch"));
        }
        let cache = self.forward_batch(&Matrix::row_vector(x))?;
        let (g, dx) = self.backward_batch(&cache, &Matrix::row_vector(upstream))?;
        Ok((g, dx.into_vec()))
    }

    /// One bias-corrected Adam update; increments the step counter.
    pub fn adam_step(&mut self, grads: &GradientSet, cfg: &AdamConfig) -> Result<()> {
        if !grads.compatible_with(self) {
            return Err(invalid("gradient set does not match network shape"));
        }
        if !grads.is_finite() {
            return Err(invalid("non-finite gradients"));
        }
        if !(cfg.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        let st = &mut self.optimizer;
        st.step += 1;
        let t = st.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        };
        for l in 0..self.weights.len() {
            update(
                self.weights[l].as_mut_slice(),
                st.m_weights[l].as_mut_slice(),
                st.v_weights[l].as_mut_slice(),
                grads.weights[l].as_slice(),
            );
            update(&mut self.biases[l], &mut st.m_biases[l], &mut st.v_biases[l], &grads.biases[l]);
        }
        Ok(())
    }

    /// `target ← τ·online + (1−τ)·target` for every parameter.
    pub fn soft_update(&mut self, online: &MlpNetwork, tau: f64) -> Result<()> {
        if !self.same_architecture(online) {
            return Err(invalid("soft update between different architectures"));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(invalid(format!("tau {tau} outside [0, 1]")));
        }
        let blend = |t: &mut [f64], o: &[f64]| {
            for (tv, ov) in t.iter_mut().zip(o) {
                *tv = tau * ov + (1.0 - tau) * *tv;
            }
        };
        for l in 0..self.weights.len() {
            blend(self.weights[l].as_mut_slice(), online.weights[l].as_slice());
            blend(&mut self.biases[l], &online.biases[l]);
        }
        Ok(())
    }

    /// Copies parameters from `online`, leaving optimizer state alone.
    pub fn copy_parameters_from(&mut self, online: &MlpNetwork) -> Result<()> {
        self.soft_update(online, 1.0)
    }
}
