//! Three-layer graph convolution stack and global mean pooling.
//!
//! Each layer computes `relu(Â H W)` with `Â = D^-1/2 (A + I) D^-1/2`, where
//! `D` is the degree matrix of `A + I`. Layers have no bias. Batches are
//! stored as `(B * N) x F` matrices, one contiguous block of `N` rows per
//! graph.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::ParamSet;

#[derive(Debug, Error, PartialEq)]
pub enum GcnError {
    #[error("adjacency matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("adjacency matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("adjacency matrix has a non-zero diagonal at {0}")]
    SelfLoop(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("cannot pool an empty node set")]
    Empty,
}

pub const HIDDEN_WIDTH: usize = 64;
pub const DEFAULT_OUTPUT_WIDTH: usize = 32;

/// `D^-1/2 (A + I) D^-1/2` for a symmetric 0/1 adjacency with zero diagonal.
pub fn normalize_adjacency(a: &Array2<f64>) -> Result<Array2<f64>, GcnError> {
    let (r, c) = a.dim();
    if r != c {
        return Err(GcnError::NotSquare(r, c));
    }
    for i in 0..r {
        if a[[i, i]] != 0.0 {
            return Err(GcnError::SelfLoop(i));
        }
        for j in 0..i {
            if a[[i, j]] != a[[j, i]] {
                return Err(GcnError::Asymmetric(i, j));
            }
        }
    }
    let with_loops = a + &Array2::<f64>::eye(r);
    let inv_sqrt_deg: Vec<f64> = with_loops
        .sum_axis(Axis(1))
        .iter()
        .map(|d| 1.0 / d.sqrt())
        .collect();
    Ok(Array2::from_shape_fn((r, r), |(i, j)| {
        inv_sqrt_deg[i] * with_loops[[i, j]] * inv_sqrt_deg[j]
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnStack {
    /// `D x 64`, `64 x 64`, `64 x out`
    pub weights: Vec<Array2<f64>>,
    pub a_hat: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GcnTape {
    input: Array2<f64>,
    outputs: Vec<Array2<f64>>,
}

impl GcnStack {
    pub fn new<R: Rng + ?Sized>(a_hat: Array2<f64>, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let sizes = [in_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, out_dim];
        let weights = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                Array2::from_shape_fn((w[0], w[1]), |_| dist.sample(rng))
            })
            .collect();
        Self { weights, a_hat }
    }

    pub fn nodes(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.last().expect("three layers").ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            a_hat: self.a_hat.clone(),
        }
    }

    /// Applies `Â` to every `N`-row block of `h`.
    fn propagate(&self, h: &Array2<f64>, transpose: bool) -> Array2<f64> {
        let n = self.nodes();
        let mut out = Array2::zeros(h.raw_dim());
        let op = if transpose { self.a_hat.t() } else { self.a_hat.view() };
        for b in 0..h.nrows() / n {
            let rows = s![b * n..(b + 1) * n, ..];
            ndarray::linalg::general_mat_mul(1.0, &op, &h.slice(rows), 0.0, &mut out.slice_mut(rows));
        }
        out
    }

    /// Node embeddings for a batch of graphs, `(B * N) x D -> (B * N) x out`.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, GcnTape), GcnError> {
        let n = self.nodes();
        if x.ncols() != self.in_dim() || n == 0 || x.nrows() % n != 0 {
            return Err(GcnError::Shape {
                expected: format!("(B*{n}) x {}", self.in_dim()),
                got: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        let input = x.to_owned();
        let mut outputs: Vec<Array2<f64>> = Vec::with_capacity(3);
        for w in &self.weights {
            let h = outputs.last().unwrap_or(&input);
            let mut z = self.propagate(&h.dot(w), false);
            z.mapv_inplace(|v| v.max(0.0));
            outputs.push(z);
        }
        let y = outputs.last().expect("three layers").clone();
        Ok((y, GcnTape { input, outputs }))
    }

    /// Accumulates weight gradients and returns the gradient for the node features.
    pub fn backward(
        &self,
        tape: &GcnTape,
        upstream: &Array2<f64>,
        grads: &mut GcnStack,
    ) -> Result<Array2<f64>, GcnError> {
        let out = tape.outputs.last().expect("three layers");
        if upstream.dim() != out.dim() {
            return Err(GcnError::Shape {
                expected: format!("{:?}", out.dim()),
                got: format!("{:?}", upstream.dim()),
            });
        }
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            delta.zip_mut_with(&tape.outputs[l], |g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
            let d_xw = self.propagate(&delta, true);
            let h_in = if l == 0 { &tape.input } else { &tape.outputs[l - 1] };
            ndarray::linalg::general_mat_mul(1.0, &h_in.t(), &d_xw, 1.0, &mut grads.weights[l]);
            delta = d_xw.dot(&self.weights[l].t());
        }
        Ok(delta)
    }
}

impl ParamSet for GcnStack {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect()
    }
}

/// Column-wise mean of one graph's node embeddings.
pub fn global_mean_pool(h: ArrayView2<f64>) -> Result<Vec<f64>, GcnError> {
    if h.nrows() == 0 {
        return Err(GcnError::Empty);
    }
    Ok(h.mean_axis(Axis(0)).expect("non-empty").to_vec())
}

/// Pools each `n`-row block of a batch, `(B * n) x F -> B x F`.
pub fn mean_pool_batch(h: &Array2<f64>, n: usize) -> Result<Array2<f64>, GcnError> {
    if n == 0 || h.nrows() == 0 || h.nrows() % n != 0 {
        return Err(GcnError::Empty);
    }
    let batch = h.nrows() / n;
    let pooled = h
        .view()
        .into_shape_with_order((batch, n, h.ncols()))
        .expect("contiguous batch")
        .mean_axis(Axis(1))
        .expect("n > 0");
    Ok(pooled)
}

/// Gradient of [`mean_pool_batch`]: each node row receives `upstream / n`.
pub fn mean_pool_backward(upstream: &Array2<f64>, n: usize) -> Array2<f64> {
    let (batch, f) = upstream.dim();
    let scale = 1.0 / n as f64;
    Array2::from_shape_fn((batch * n, f), |(r, c)| upstream[[r / n, c]] * scale)
}
