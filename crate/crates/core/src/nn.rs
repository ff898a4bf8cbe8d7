//! Dense networks with hand-written reverse-mode gradients, Adam, and the
//! diagonal Gaussian used by the actors.
//!
//! Everything is `f64`. Forward passes are batched: inputs are `batch x in`
//! matrices and a [`Tape`] keeps what `backward` needs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|x| x.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the activation derivative, given the activated output.
    fn backprop(self, output: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Relu => grad.zip_mut_with(output, |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Tanh => grad.zip_mut_with(output, |g, &y| *g *= 1.0 - y * y),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `in x out`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

#[derive(Debug, Clone)]
pub struct Tape {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    fn layer_input(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.outputs[l - 1]
        }
    }

    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("non-empty network")
    }
}

impl DenseNet {
    /// He-uniform hidden layers; the last layer's weights are scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let depth = sizes.len() - 1;
        let layers = (0..depth)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let gain = if l + 1 == depth { out_gain } else { 1.0 };
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| gain * dist.sample(rng));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation: if l + 1 == depth { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape {
                expected: format!("{} input columns", self.input_dim()),
                got: x.ncols().to_string(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network input"));
        }
        let input = x.to_owned();
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = outputs.last().unwrap_or(&input);
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            outputs.push(z);
        }
        let y = outputs.last().expect("non-empty network").clone();
        Ok((y, Tape { input, outputs }))
    }

    /// Single-sample convenience wrapper around [`DenseNet::forward`].
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (y, _) = self.forward(view)?;
        Ok(y.into_raw_vec_and_offset().0)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input batch.
    pub fn backward(
        &self,
        tape: &Tape,
        upstream: &Array2<f64>,
        grads: &mut DenseNet,
    ) -> Result<Array2<f64>, NnError> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(NnError::Shape {
                expected: format!("{:?}", out.dim()),
                got: format!("{:?}", upstream.dim()),
            });
        }
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            layer.activation.backprop(&tape.outputs[l], &mut delta);
            let g = &mut grads.layers[l];
            ndarray::linalg::general_mat_mul(1.0, &tape.layer_input(l).t(), &delta, 1.0, &mut g.weight);
            g.bias += &delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weight.t());
        }
        Ok(delta)
    }
}

/// Flat views over every trainable tensor, in a stable order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

impl ParamSet for DenseNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<P: ParamSet + ?Sized>(params: &P, lr: f64, weight_decay: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            lr,
            weight_decay,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update. A non-finite gradient leaves both the parameters
    /// and the optimizer state untouched.
    pub fn step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &G,
    ) -> Result<(), NnError> {
        let gs = grads.tensors();
        if gs.len() != self.m.len() || gs.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return Err(NnError::Shape {
                expected: format!("{} tensors", self.m.len()),
                got: format!("{} tensors", gs.len()),
            });
        }
        if gs.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(NnError::NonFinite("gradient"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(gs)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for k in 0..p.len() {
                m[k] = flush_subnormal(self.beta1 * m[k] + (1.0 - self.beta1) * g[k]);
                v[k] = flush_subnormal(self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k]);
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] = p[k] * decay - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Moments of long-dead units decay into subnormals, which are very slow on
/// most CPUs.
fn flush_subnormal(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian with a clamped log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, log_std: &[f64]) -> Self {
        let log_std = log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Self { mean, log_std }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        gaussian_log_prob(&self.mean, &self.log_std, action)
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(&self.log_std)
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&mu, &ls), &a)| {
            let z = (a - mu) * (-ls).exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|&ls| 0.5 + HALF_LN_2PI + ls).sum()
}

/// `(log-probability, entropy)` of `action` under `head`.
pub fn gaussian_logprob_entropy(head: &GaussianHead, action: &[f64]) -> (f64, f64) {
    (head.log_prob(action), head.entropy())
}

/// Partial derivatives of the log-density with respect to the mean and the
/// log standard deviation.
pub fn gaussian_log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(mean.len());
    let mut d_log_std = Vec::with_capacity(mean.len());
    for ((&mu, &ls), &a) in mean.iter().zip(log_std).zip(action) {
        let inv_var = (-2.0 * ls).exp();
        d_mean.push((a - mu) * inv_var);
        d_log_std.push((a - mu) * (a - mu) * inv_var - 1.0);
    }
    (d_mean, d_log_std)
}

/// `KL(old || new)` between diagonal Gaussians.
pub fn gaussian_kl(old_mean: &[f64], old_log_std: &[f64], new_mean: &[f64], new_log_std: &[f64]) -> f64 {
    old_mean
        .iter()
        .zip(old_log_std)
        .zip(new_mean.iter().zip(new_log_std))
        .map(|((&mo, &lo), (&mn, &ln))| {
            let var_o = (2.0 * lo).exp();
            let var_n = (2.0 * ln).exp();
            ln - lo + (var_o + (mo - mn) * (mo - mn)) / (2.0 * var_n) - 0.5
        })
        .sum()
}

/// Gradient of `KL(old || new)` with respect to the new mean and log std.
pub fn gaussian_kl_grad(
    old_mean: &[f64],
    old_log_std: &[f64],
    new_mean: &[f64],
    new_log_std: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(new_mean.len());
    let mut d_log_std = Vec::with_capacity(new_mean.len());
    for k in 0..new_mean.len() {
        let var_o = (2.0 * old_log_std[k]).exp();
        let inv_var_n = (-2.0 * new_log_std[k]).exp();
        let diff = new_mean[k] - old_mean[k];
        d_mean.push(diff * inv_var_n);
        d_log_std.push(1.0 - (var_o + diff * diff) * inv_var_n);
    }
    (d_mean, d_log_std)
}
