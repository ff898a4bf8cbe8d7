//! Per-agent actors that emit a dynamic (s, S) reorder policy.
//!
//! The actor maps a node's normalized observation to a diagonal Gaussian
//! over raw `(s, S)` in `[-1, 1]^2`. A sample is clipped to the box, min-max
//! scaled into unit bounds, and turned into an integer order: when on-hand
//! stock is at or below `s`, order up to `S`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{gaussian_log_prob, Activation, DenseNet, GaussianHead, NnError, ParamSet, Tape};
use crate::supply_net::NodeParams;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("scaling bounds require lo < hi, got [{lo}, {hi}]")]
    Bounds { lo: f64, hi: f64 },
    #[error("non-finite actor output")]
    NonFinite,
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub const ACTOR_HIDDEN: [usize; 3] = [128, 128, 128];
pub const ACTION_DIM: usize = 2;
pub const INITIAL_LOG_STD: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    /// ReLU hidden layers with a tanh output, so the mean lies in `[-1, 1]^2`.
    pub net: DenseNet,
    /// State-independent; clamped to `[LOG_STD_MIN, LOG_STD_MAX]` when used.
    pub log_std: Vec<f64>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend(ACTOR_HIDDEN);
        sizes.push(ACTION_DIM);
        Self {
            net: DenseNet::new(&sizes, Activation::Relu, Activation::Tanh, 0.01, rng),
            log_std: vec![INITIAL_LOG_STD; ACTION_DIM],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
            log_std: vec![0.0; self.log_std.len()],
        }
    }

    pub fn head(&self, obs: &[f64]) -> Result<GaussianHead, PolicyError> {
        let mean = self.net.forward_one(obs)?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(GaussianHead::new(mean, &self.log_std))
    }

    /// Batched means, `B x obs_dim -> B x 2`.
    pub fn forward_batch(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Tape), PolicyError> {
        let (mean, tape) = self.net.forward(obs)?;
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok((mean, tape))
    }

    /// Log standard deviation as actually used (after clamping).
    pub fn effective_log_std(&self) -> Vec<f64> {
        GaussianHead::new(vec![0.0; self.log_std.len()], &self.log_std).log_std
    }

    pub fn entropy(&self) -> f64 {
        crate::nn::gaussian_entropy(&self.effective_log_std())
    }
}

impl ParamSet for Actor {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.net.tensors();
        t.push(&self.log_std);
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.net.tensors_mut();
        t.push(&mut self.log_std);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAction {
    /// Unclipped Gaussian sample; the log-probability refers to this point.
    pub sample: Vec<f64>,
    /// Sample clipped to `[-1, 1]`, used to build the order.
    pub clipped: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
}

/// Samples a raw `(s, S)` pair for one normalized observation.
pub fn act<R: Rng + ?Sized>(actor: &Actor, obs: &[f64], rng: &mut R) -> Result<RawAction, PolicyError> {
    let head = actor.head(obs)?;
    Ok(sample_head(&head, rng))
}

pub fn sample_head<R: Rng + ?Sized>(head: &GaussianHead, rng: &mut R) -> RawAction {
    let sample: Vec<f64> = head
        .mean
        .iter()
        .zip(head.std())
        .map(|(&mu, sd)| {
            let eps: f64 = rng.sample(StandardNormal);
            mu + sd * eps
        })
        .collect();
    let log_prob = gaussian_log_prob(&head.mean, &head.log_std, &sample);
    let clipped = sample.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    RawAction {
        sample,
        clipped,
        log_prob,
        mean: head.mean.clone(),
    }
}

/// Min-max map from `[-1, 1]` onto `[lo, hi]`.
pub fn scale(x_raw: f64, lo: f64, hi: f64) -> Result<f64, PolicyError> {
    if !(lo < hi) {
        return Err(PolicyError::Bounds { lo, hi });
    }
    Ok((x_raw + 1.0) / 2.0 * (hi - lo) + lo)
}

/// Order up to `S` when on-hand stock is at or below `s`, otherwise nothing.
pub fn order_from_ss(s_scaled: f64, big_s_scaled: f64, on_hand: f64, max_order: i64) -> i64 {
    if on_hand <= s_scaled {
        let want = (big_s_scaled - on_hand).round();
        (want.max(0.0) as i64).min(max_order)
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub s_min: f64,
    pub s_max: f64,
    pub big_s_min: f64,
    pub big_s_max: f64,
}

impl ActionBounds {
    pub fn for_node(node: &NodeParams) -> Self {
        let v_max = node.max_inventory as f64;
        Self {
            s_min: 0.0,
            s_max: v_max,
            big_s_min: 0.0,
            big_s_max: v_max,
        }
    }

    /// Scaled `(s, S)` for a raw action already clipped to the box.
    pub fn scale_pair(&self, raw: &[f64]) -> Result<(f64, f64), PolicyError> {
        Ok((
            scale(raw[0], self.s_min, self.s_max)?,
            scale(raw[1], self.big_s_min, self.big_s_max)?,
        ))
    }
}

/// Turns a clipped raw action into the node's integer order.
pub fn order_for(node: &NodeParams, raw: &[f64], on_hand: f64) -> Result<i64, PolicyError> {
    let (s, big_s) = ActionBounds::for_node(node).scale_pair(raw)?;
    Ok(order_from_ss(s, big_s, on_hand, node.max_order))
}
