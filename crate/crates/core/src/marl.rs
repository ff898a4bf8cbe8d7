//! Multi-agent PPO with a KL penalty and five critic variants.
//!
//! Every node has its own actor. The variants differ only in the critic:
//!
//! * `Ippo`: one critic per agent over that agent's observation;
//! * `Mappo`: one shared critic over the concatenated observations;
//! * `GMappo`: a GCN embeds the node features, the flattened embeddings feed
//!   the critic;
//! * `PGcnMappo`: as above but the embeddings are mean-pooled first;
//! * `RegPGcnMappo`: `PGcnMappo` plus zero-mean Gaussian noise on every value
//!   estimate collected during rollouts (one draw per state, shared across
//!   agents).
//!
//! Rollouts run many episodes in lockstep so network evaluations are
//! batched. Each episode owns its RNG streams (environment, action sampling,
//! value noise), all derived from the run seed, the iteration and the episode
//! index, so results do not depend on the worker count.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, EnvState, ObsNormalizer, Observation};
use crate::eval::{evaluate_policy, EpisodeSummary, EvalStats, JointPolicy};
use crate::gcn::{mean_pool_backward, mean_pool_batch, normalize_adjacency, GcnError, GcnStack, GcnTape};
use crate::nn::{
    gaussian_kl, gaussian_kl_grad, gaussian_log_prob, gaussian_log_prob_grad, Activation, Adam, DenseNet, NnError,
    ParamSet, Tape, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::policy::{order_for, Actor, PolicyError, ACTION_DIM};
use crate::supply_net::{adjacency, SupplyNetwork};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("unknown algorithm '{0}' (expected ippo, mappo, g-mappo, p-gcn-mappo or reg-p-gcn-mappo)")]
    UnknownVariant(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("checkpoint does not match the network: {0}")]
    CheckpointMismatch(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Gcn(#[from] GcnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Ippo,
    Mappo,
    GMappo,
    PGcnMappo,
    RegPGcnMappo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Ippo,
        Variant::Mappo,
        Variant::GMappo,
        Variant::PGcnMappo,
        Variant::RegPGcnMappo,
    ];

    /// Command-line spelling.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ippo => "ippo",
            Variant::Mappo => "mappo",
            Variant::GMappo => "g-mappo",
            Variant::PGcnMappo => "p-gcn-mappo",
            Variant::RegPGcnMappo => "reg-p-gcn-mappo",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ippo => "IPPO",
            Variant::Mappo => "MAPPO",
            Variant::GMappo => "G-MAPPO",
            Variant::PGcnMappo => "P-GCN-MAPPO",
            Variant::RegPGcnMappo => "Reg-P-GCN-MAPPO",
        }
    }

    pub fn uses_gcn(self) -> bool {
        matches!(self, Variant::GMappo | Variant::PGcnMappo | Variant::RegPGcnMappo)
    }

    pub fn pooled(self) -> bool {
        matches!(self, Variant::PGcnMappo | Variant::RegPGcnMappo)
    }

    pub fn noisy(self) -> bool {
        self == Variant::RegPGcnMappo
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = MarlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key || v.label().to_ascii_lowercase() == key)
            .ok_or_else(|| MarlError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub variant: Variant,
    pub seed: u64,
    pub iterations: usize,
    /// Environment steps collected per iteration (rounded up to whole episodes).
    pub batch_steps: usize,
    /// Environment steps per gradient minibatch.
    pub minibatch_steps: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub kl_coeff: f64,
    pub kl_target: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub vf_coeff: f64,
    pub entropy_coeff: f64,
    /// Standard deviation of the value noise; only used by `RegPGcnMappo`.
    pub noise_std: f64,
    /// Multiplier applied to team rewards before advantage estimation.
    pub reward_scale: f64,
    pub gcn_out: usize,
}

pub const DEFAULT_REWARD_SCALE: f64 = 0.01;

impl AlgoConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            seed: 0,
            iterations: 60,
            batch_steps: 4000,
            minibatch_steps: 32,
            clip: 0.3,
            gamma: 0.99,
            gae_lambda: 1.0,
            kl_coeff: 0.2,
            kl_target: 0.01,
            lr: 1e-3,
            weight_decay: 1e-4,
            vf_coeff: 0.5,
            entropy_coeff: 0.0,
            noise_std: 0.0,
            reward_scale: DEFAULT_REWARD_SCALE,
            gcn_out: crate::gcn::DEFAULT_OUTPUT_WIDTH,
        }
    }

    pub fn validate(&self) -> Result<(), MarlError> {
        let bad = |msg: &str| Err(MarlError::Config(msg.to_string()));
        if self.batch_steps == 0 || self.minibatch_steps == 0 {
            return bad("batch and minibatch sizes must be positive");
        }
        if !(self.clip > 0.0) || !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("clip must be positive, gamma and lambda in [0, 1]");
        }
        if !(self.kl_coeff >= 0.0) || !(self.kl_target > 0.0) {
            return bad("kl coefficient must be non-negative and the target positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("learning rate, weight decay and noise std must be non-negative");
        }
        if !(self.reward_scale > 0.0) || !self.reward_scale.is_finite() {
            return bad("reward scale must be positive");
        }
        if self.gcn_out == 0 {
            return bad("gcn output width must be positive");
        }
        Ok(())
    }
}

/// SplitMix64-style mixing of a base seed with a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

const TAG_ACTOR: u64 = 1;
const TAG_CRITIC: u64 = 2;
const TAG_ENV: u64 = 3;
const TAG_ACTION: u64 = 4;
const TAG_NOISE: u64 = 5;
const TAG_SHUFFLE: u64 = 6;

/// Generalized advantage estimation over one episode.
///
/// `values[t]` estimates the state before reward `rewards[t]`; `bootstrap`
/// is the value after the last step (zero for a terminal state). Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), MarlError> {
    if rewards.len() != values.len() {
        return Err(MarlError::Length(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    if rewards.iter().chain(values).any(|x| !x.is_finite()) || !bootstrap.is_finite() {
        return Err(MarlError::NonFinite("advantage inputs"));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    /// Mean of `-min(r A, clip(r) A)` over the batch.
    pub loss: f64,
    /// Gradient of `loss` with respect to each new log-probability.
    pub grad_logp: Vec<f64>,
    pub clip_fraction: f64,
}

/// Clipped surrogate loss. Samples whose clipped term is the active minimum
/// contribute no gradient.
pub fn ppo_policy_loss(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Result<PpoLoss, MarlError> {
    let n = logp_new.len();
    if logp_old.len() != n || advantages.len() != n {
        return Err(MarlError::Length(format!(
            "{} new, {} old log-probs, {} advantages",
            n,
            logp_old.len(),
            advantages.len()
        )));
    }
    if n == 0 {
        return Ok(PpoLoss {
            loss: 0.0,
            grad_logp: Vec::new(),
            clip_fraction: 0.0,
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    let mut clipped = 0usize;
    for k in 0..n {
        let ratio = (logp_new[k] - logp_old[k]).exp();
        let a = advantages[k];
        if !ratio.is_finite() || !a.is_finite() {
            return Err(MarlError::NonFinite("probability ratio"));
        }
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        if clipped_term < unclipped {
            loss -= clipped_term;
            grad.push(0.0);
            clipped += 1;
        } else {
            loss -= unclipped;
            grad.push(-unclipped / n as f64);
        }
    }
    Ok(PpoLoss {
        loss: loss / n as f64,
        grad_logp: grad,
        clip_fraction: clipped as f64 / n as f64,
    })
}

/// Adaptive KL coefficient: doubled when the observed divergence exceeds
/// 1.5x the target, halved when it is below target / 1.5.
pub fn kl_update(beta: f64, observed_kl: f64, target: f64) -> f64 {
    if observed_kl > 1.5 * target {
        beta * 2.0
    } else if observed_kl < target / 1.5 {
        beta * 0.5
    } else {
        beta
    }
}

/// Adds one `N(0, sigma^2)` draw to every entry (one state's values for all
/// agents). With `sigma == 0` nothing is drawn and the values are untouched.
pub fn inject_value_noise<R: Rng + ?Sized>(values: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let z: f64 = rng.sample(StandardNormal);
    for v in values {
        *v += sigma * z;
    }
}

pub const CRITIC_HIDDEN: [usize; 3] = [256, 256, 256];

/// Value function(s) for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub variant: Variant,
    pub nodes: usize,
    pub obs_dim: usize,
    /// One network per agent for `Ippo`, otherwise a single shared network.
    pub nets: Vec<DenseNet>,
    pub gcn: Option<GcnStack>,
}

pub struct CriticTape {
    nets: Vec<Tape>,
    gcn: Option<GcnTape>,
    batch: usize,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        variant: Variant,
        net: &SupplyNetwork,
        gcn_out: usize,
        rng: &mut R,
    ) -> Result<Self, MarlError> {
        let n = net.len();
        let d = net.obs_dim();
        let gcn = if variant.uses_gcn() {
            let a_hat = normalize_adjacency(&adjacency(net).symmetric)?;
            Some(GcnStack::new(a_hat, d, gcn_out, rng))
        } else {
            None
        };
        let (count, in_dim) = match variant {
            Variant::Ippo => (n, d),
            Variant::Mappo => (1, n * d),
            Variant::GMappo => (1, n * gcn_out),
            Variant::PGcnMappo | Variant::RegPGcnMappo => (1, gcn_out),
        };
        let mut sizes = vec![in_dim];
        sizes.extend(CRITIC_HIDDEN);
        sizes.push(1);
        let nets = (0..count)
            .map(|_| DenseNet::new(&sizes, Activation::Relu, Activation::Identity, 1.0, rng))
            .collect();
        Ok(Self {
            variant,
            nodes: n,
            obs_dim: d,
            nets,
            gcn,
        })
    }

    /// Width of the dense value network's input.
    pub fn input_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    /// Value columns per state: one per agent for `Ippo`, otherwise one.
    pub fn streams(&self) -> usize {
        self.nets.len()
    }

    /// Which value column agent `i` reads.
    pub fn stream_of(&self, i: usize) -> usize {
        if self.nets.len() == 1 {
            0
        } else {
            i
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            variant: self.variant,
            nodes: self.nodes,
            obs_dim: self.obs_dim,
            nets: self.nets.iter().map(DenseNet::zeros_like).collect(),
            gcn: self.gcn.as_ref().map(GcnStack::zeros_like),
        }
    }

    /// Values for a batch of states, `(B * N) x D` normalized observations
    /// (one block of `N` rows per state) to `B x streams`.
    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<(Array2<f64>, CriticTape), MarlError> {
        let (n, d) = (self.nodes, self.obs_dim);
        if obs.ncols() != d || obs.nrows() % n != 0 {
            return Err(MarlError::Length(format!(
                "critic expects (B*{n}) x {d} observations, got {} x {}",
                obs.nrows(),
                obs.ncols()
            )));
        }
        let batch = obs.nrows() / n;
        let mut values = Array2::zeros((batch, self.streams()));
        let mut tapes = Vec::with_capacity(self.nets.len());
        let mut gcn_tape = None;
        match self.variant {
            Variant::Ippo => {
                for (i, net) in self.nets.iter().enumerate() {
                    let (v, tape) = net.forward(obs.slice(s![i..;n, ..]))?;
                    values.column_mut(i).assign(&v.column(0));
                    tapes.push(tape);
                }
            }
            Variant::Mappo => {
                let flat = obs.as_standard_layout().into_owned();
                let flat = flat
                    .into_shape_with_order((batch, n * d))
                    .expect("contiguous observations");
                let (v, tape) = self.nets[0].forward(flat.view())?;
                values.assign(&v);
                tapes.push(tape);
            }
            Variant::GMappo | Variant::PGcnMappo | Variant::RegPGcnMappo => {
                let gcn = self.gcn.as_ref().expect("gcn variant");
                let (h, tape) = gcn.forward(obs)?;
                let input = if self.variant == Variant::GMappo {
                    let w = h.ncols();
                    h.into_shape_with_order((batch, n * w)).expect("contiguous embeddings")
                } else {
                    mean_pool_batch(&h, n)?
                };
                let (v, net_tape) = self.nets[0].forward(input.view())?;
                values.assign(&v);
                tapes.push(net_tape);
                gcn_tape = Some(tape);
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarlError::NonFinite("critic output"));
        }
        Ok((
            values,
            CriticTape {
                nets: tapes,
                gcn: gcn_tape,
                batch,
            },
        ))
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>, MarlError> {
        Ok(self.forward(obs)?.0)
    }

    /// Accumulates parameter gradients for upstream `d_values` (`B x streams`).
    pub fn backward(&self, tape: &CriticTape, d_values: &Array2<f64>, grads: &mut Critic) -> Result<(), MarlError> {
        let n = self.nodes;
        if d_values.dim() != (tape.batch, self.streams()) {
            return Err(MarlError::Length(format!(
                "value gradient {:?} for batch {} x {}",
                d_values.dim(),
                tape.batch,
                self.streams()
            )));
        }
        match self.variant {
            Variant::Ippo => {
                for (i, net) in self.nets.iter().enumerate() {
                    let up = d_values.slice(s![.., i..i + 1]).to_owned();
                    net.backward(&tape.nets[i], &up, &mut grads.nets[i])?;
                }
            }
            Variant::Mappo => {
                self.nets[0].backward(&tape.nets[0], d_values, &mut grads.nets[0])?;
            }
            Variant::GMappo | Variant::PGcnMappo | Variant::RegPGcnMappo => {
                let d_input = self.nets[0].backward(&tape.nets[0], d_values, &mut grads.nets[0])?;
                let gcn = self.gcn.as_ref().expect("gcn variant");
                let w = gcn.out_dim();
                let d_h = if self.variant == Variant::GMappo {
                    d_input
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order((tape.batch * n, w))
                        .expect("contiguous gradient")
                } else {
                    mean_pool_backward(&d_input, n)
                };
                let gcn_grads = grads.gcn.as_mut().expect("gcn gradient buffer");
                gcn.backward(tape.gcn.as_ref().expect("gcn tape"), &d_h, gcn_grads)?;
            }
        }
        Ok(())
    }
}

impl ParamSet for Critic {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t: Vec<&[f64]> = self.nets.iter().flat_map(|n| n.tensors()).collect();
        if let Some(g) = &self.gcn {
            t.extend(g.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t: Vec<&mut [f64]> = self.nets.iter_mut().flat_map(|n| n.tensors_mut()).collect();
        if let Some(g) = &mut self.gcn {
            t.extend(g.tensors_mut());
        }
        t
    }
}

/// Deterministic joint policy: every actor plays its mean action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedPolicy {
    pub actors: Vec<Actor>,
    pub normalizer: ObsNormalizer,
}

impl JointPolicy for LearnedPolicy {
    fn orders(&self, net: &SupplyNetwork, obs: &[Observation]) -> Vec<i64> {
        obs.iter()
            .enumerate()
            .map(|(i, o)| {
                let x = self.normalizer.apply(i, o);
                let mean = self.actors[i].net.forward_one(&x).expect("observation width checked");
                order_for(&net.nodes[i], &mean, o.inventory()).expect("non-degenerate bounds")
            })
            .collect()
    }
}

impl LearnedPolicy {
    pub fn check_network(&self, net: &SupplyNetwork) -> Result<(), MarlError> {
        if self.actors.len() != net.len() {
            return Err(MarlError::CheckpointMismatch(format!(
                "policy has {} agents, network has {} nodes",
                self.actors.len(),
                net.len()
            )));
        }
        if let Some(a) = self.actors.first() {
            if a.net.input_dim() != net.obs_dim() {
                return Err(MarlError::CheckpointMismatch(format!(
                    "policy expects observation width {}, network gives {}",
                    a.net.input_dim(),
                    net.obs_dim()
                )));
            }
        }
        Ok(())
    }

    /// Deterministic evaluation over the given episode seeds.
    pub fn evaluate(&self, net: &SupplyNetwork, seeds: &[u64]) -> Result<(EvalStats, Vec<EpisodeSummary>), MarlError> {
        self.check_network(net)?;
        Ok(evaluate_policy(net, self, seeds))
    }
}

/// Per-iteration training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// 1-based.
    pub iteration: usize,
    /// Mean undiscounted, unscaled team return of the rollout episodes.
    pub mean_profit: f64,
    /// Mean over agents of the policy entropy after the update.
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean over minibatches of the agent-averaged KL(old || new).
    pub kl: f64,
    /// Coefficient used for this iteration's updates.
    pub kl_coeff: f64,
    pub clip_fraction: f64,
    pub env_steps: usize,
    pub seconds: f64,
}

/// One iteration's experience, stored step-major: step `s = e * T + t`,
/// observation row `s * N + i` for agent `i`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub nodes: usize,
    pub episode_len: usize,
    pub episodes: usize,
    pub obs: Array2<f64>,
    pub samples: Array2<f64>,
    pub old_means: Array2<f64>,
    pub old_logp: Vec<f64>,
    /// Scaled team rewards, one per step.
    pub rewards: Vec<f64>,
    /// Value estimates (noise included) per step and stream.
    pub values: Array2<f64>,
    pub dones: Vec<bool>,
    /// Value after each episode's last step, `episodes x streams`; zero
    /// because the horizon is terminal.
    pub bootstrap: Array2<f64>,
    pub profits: Vec<f64>,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    fn concat(parts: Vec<Rollout>) -> Rollout {
        let first = &parts[0];
        let (nodes, episode_len) = (first.nodes, first.episode_len);
        let cat = |f: &dyn Fn(&Rollout) -> ArrayView2<f64>| {
            let views: Vec<ArrayView2<f64>> = parts.iter().map(f).collect();
            ndarray::concatenate(Axis(0), &views).expect("matching widths")
        };
        Rollout {
            nodes,
            episode_len,
            episodes: parts.iter().map(|p| p.episodes).sum(),
            obs: cat(&|p| p.obs.view()),
            samples: cat(&|p| p.samples.view()),
            old_means: cat(&|p| p.old_means.view()),
            old_logp: parts.iter().flat_map(|p| p.old_logp.iter().copied()).collect(),
            rewards: parts.iter().flat_map(|p| p.rewards.iter().copied()).collect(),
            values: cat(&|p| p.values.view()),
            dones: parts.iter().flat_map(|p| p.dones.iter().copied()).collect(),
            bootstrap: cat(&|p| p.bootstrap.view()),
            profits: parts.iter().flat_map(|p| p.profits.iter().copied()).collect(),
        }
    }
}

/// Episodes simulated together in one batched rollout chunk. Fixed so the
/// chunking (and therefore every floating-point result) is independent of
/// the number of worker threads.
pub const ROLLOUT_CHUNK: usize = 10;

/// Environment variable that sets the rollout worker count.
pub const WORKERS_ENV: &str = "ECHELON_WORKERS";

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: AlgoConfig,
    pub network_name: String,
    /// Demand rate the policy was trained under.
    pub lambda_d: f64,
    pub nodes: usize,
    pub obs_dim: usize,
    pub edges: Vec<(usize, usize)>,
    pub normalizer: ObsNormalizer,
    pub actors: Vec<Actor>,
    pub actor_opts: Vec<Adam>,
    pub critic: Critic,
    pub critic_opt: Adam,
    pub kl_coeff: f64,
    pub iteration: usize,
    pub history: Vec<IterationStats>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), MarlError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MarlError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: Checkpoint = serde_json::from_reader(file)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(MarlError::Version(ck.version));
        }
        Ok(ck)
    }

    pub fn policy(&self) -> LearnedPolicy {
        LearnedPolicy {
            actors: self.actors.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    /// Fails if `network` differs in size, observation width or topology.
    pub fn check_network(&self, network: &SupplyNetwork) -> Result<(), MarlError> {
        if self.nodes != network.len() {
            return Err(MarlError::CheckpointMismatch(format!(
                "{} agents in checkpoint, {} nodes in network",
                self.nodes,
                network.len()
            )));
        }
        if self.obs_dim != network.obs_dim() {
            return Err(MarlError::CheckpointMismatch(format!(
                "observation width {} in checkpoint, {} in network",
                self.obs_dim,
                network.obs_dim()
            )));
        }
        if self.edges != edge_list(&network) {
            return Err(MarlError::CheckpointMismatch("network topology differs".into()));
        }
        Ok(())
    }
}

fn edge_list(net: &SupplyNetwork) -> Vec<(usize, usize)> {
    net.nodes
        .iter()
        .flat_map(|n| n.downstream.iter().map(move |&d| (n.id, d)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: AlgoConfig,
    pub network: SupplyNetwork,
    pub network_name: String,
    pub normalizer: ObsNormalizer,
    pub actors: Vec<Actor>,
    pub critic: Critic,
    actor_opts: Vec<Adam>,
    critic_opt: Adam,
    pub kl_coeff: f64,
    /// Completed iterations.
    pub iteration: usize,
    pub history: Vec<IterationStats>,
    workers: usize,
}

fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(1)
}

impl Trainer {
    pub fn new(config: AlgoConfig, network: SupplyNetwork, network_name: &str) -> Result<Self, MarlError> {
        config.validate()?;
        let d = network.obs_dim();
        let actors: Vec<Actor> = (0..network.len())
            .map(|i| Actor::new(d, &mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_ACTOR, i as u64]))))
            .collect();
        let mut critic_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[TAG_CRITIC]));
        let critic = Critic::new(config.variant, &network, config.gcn_out, &mut critic_rng)?;
        let actor_opts = actors
            .iter()
            .map(|a| Adam::new(a, config.lr, config.weight_decay))
            .collect();
        let critic_opt = Adam::new(&critic, config.lr, config.weight_decay);
        Ok(Self {
            normalizer: ObsNormalizer::for_network(&network),
            kl_coeff: config.kl_coeff,
            config,
            network,
            network_name: network_name.to_string(),
            actors,
            critic,
            actor_opts,
            critic_opt,
            iteration: 0,
            history: Vec::new(),
            workers: default_workers(),
        })
    }

    pub fn set_workers(&mut self, workers: usize) {
        self.workers = workers.max(1);
    }

    pub fn policy(&self) -> LearnedPolicy {
        LearnedPolicy {
            actors: self.actors.clone(),
            normalizer: self.normalizer.clone(),
        }
    }

    pub fn mean_entropy(&self) -> f64 {
        self.actors.iter().map(Actor::entropy).sum::<f64>() / self.actors.len() as f64
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            network_name: self.network_name.clone(),
            lambda_d: self.network.lambda_d,
            nodes: self.network.len(),
            obs_dim: self.network.obs_dim(),
            edges: edge_list(&self.network),
            normalizer: self.normalizer.clone(),
            actors: self.actors.clone(),
            actor_opts: self.actor_opts.clone(),
            critic: self.critic.clone(),
            critic_opt: self.critic_opt.clone(),
            kl_coeff: self.kl_coeff,
            iteration: self.iteration,
            history: self.history.clone(),
        }
    }

    /// Restores a trainer; fails if the checkpoint was produced on a network
    /// with a different size, observation width or topology.
    pub fn from_checkpoint(ck: Checkpoint, network: SupplyNetwork) -> Result<Self, MarlError> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(MarlError::Version(ck.version));
        }
        ck.check_network(&network)?;
        if ck.actors.len() != ck.nodes || ck.actor_opts.len() != ck.nodes {
            return Err(MarlError::CheckpointMismatch("actor count differs from node count".into()));
        }
        Ok(Self {
            config: ck.config,
            network,
            network_name: ck.network_name,
            normalizer: ck.normalizer,
            actors: ck.actors,
            critic: ck.critic,
            actor_opts: ck.actor_opts,
            critic_opt: ck.critic_opt,
            kl_coeff: ck.kl_coeff,
            iteration: ck.iteration,
            history: ck.history,
            workers: default_workers(),
        })
    }

    fn episodes_per_iteration(&self) -> usize {
        self.config.batch_steps.div_ceil(self.network.horizon.max(1))
    }

    /// Collects one iteration's experience with the current actors.
    pub fn rollout(&self, iteration: usize) -> Result<Rollout, MarlError> {
        let episodes: Vec<usize> = (0..self.episodes_per_iteration()).collect();
        let chunks: Vec<&[usize]> = episodes.chunks(ROLLOUT_CHUNK).collect();
        let run = |chunk: &&[usize]| self.rollout_chunk(iteration, chunk);
        let parts: Result<Vec<Rollout>, MarlError> = if self.workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| MarlError::Config(e.to_string()))?;
            pool.install(|| chunks.par_iter().map(run).collect())
        } else {
            chunks.iter().map(run).collect()
        };
        Ok(Rollout::concat(parts?))
    }

    fn rollout_chunk(&self, iteration: usize, episodes: &[usize]) -> Result<Rollout, MarlError> {
        let net = &self.network;
        let (n, d, horizon) = (net.len(), net.obs_dim(), net.horizon);
        let e = episodes.len();
        let seed = self.config.seed;
        let it = iteration as u64;
        let noise_std = if self.config.variant.noisy() {
            self.config.noise_std
        } else {
            0.0
        };
        let mut envs = Vec::with_capacity(e);
        let mut obs = Vec::with_capacity(e);
        let mut act_rngs = Vec::with_capacity(e);
        let mut noise_rngs = Vec::with_capacity(e);
        for &k in episodes {
            let k = k as u64;
            let (state, o) = EnvState::reset(net, derive_seed(seed, &[TAG_ENV, it, k]));
            envs.push(state);
            obs.push(o);
            act_rngs.push(ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_ACTION, it, k])));
            noise_rngs.push(ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_NOISE, it, k])));
        }
        let log_stds: Vec<Vec<f64>> = self.actors.iter().map(Actor::effective_log_std).collect();
        let stds: Vec<Vec<f64>> = log_stds.iter().map(|l| l.iter().map(|x| x.exp()).collect()).collect();

        let steps = e * horizon;
        let streams = self.critic.streams();
        let mut out = Rollout {
            nodes: n,
            episode_len: horizon,
            episodes: e,
            obs: Array2::zeros((steps * n, d)),
            samples: Array2::zeros((steps * n, ACTION_DIM)),
            old_means: Array2::zeros((steps * n, ACTION_DIM)),
            old_logp: vec![0.0; steps * n],
            rewards: vec![0.0; steps],
            values: Array2::zeros((steps, streams)),
            dones: vec![false; steps],
            bootstrap: Array2::zeros((e, streams)),
            profits: vec![0.0; e],
        };
        let mut x = Array2::<f64>::zeros((e * n, d));
        let mut orders = vec![0i64; n];
        for t in 0..horizon {
            for (k, o) in obs.iter().enumerate() {
                let rows = x.slice_mut(s![k * n..(k + 1) * n, ..]);
                let rows = rows.into_slice().expect("contiguous rows");
                self.normalizer.apply_all_into(o, rows);
            }
            let means: Vec<Array2<f64>> = self
                .actors
                .iter()
                .enumerate()
                .map(|(i, a)| a.forward_batch(x.slice(s![i..;n, ..])).map(|(m, _)| m))
                .collect::<Result<_, _>>()?;
            let mut values = self.critic.values(x.view())?;
            for (k, rng) in noise_rngs.iter_mut().enumerate() {
                inject_value_noise(values.row_mut(k).as_slice_mut().expect("row"), noise_std, rng);
            }
            for k in 0..e {
                let step = k * horizon + t;
                out.values.row_mut(step).assign(&values.row(k));
                out.obs
                    .slice_mut(s![step * n..(step + 1) * n, ..])
                    .assign(&x.slice(s![k * n..(k + 1) * n, ..]));
                for i in 0..n {
                    let mean = means[i].row(k);
                    let row = step * n + i;
                    let mut sample = [0.0; ACTION_DIM];
                    for j in 0..ACTION_DIM {
                        let z: f64 = act_rngs[k].sample(StandardNormal);
                        sample[j] = mean[j] + stds[i][j] * z;
                    }
                    let mean_v = [mean[0], mean[1]];
                    out.old_logp[row] = gaussian_log_prob(&mean_v, &log_stds[i], &sample);
                    out.samples.row_mut(row).assign(&ndarray::aview1(&sample));
                    out.old_means.row_mut(row).assign(&mean);
                    let clipped = [sample[0].clamp(-1.0, 1.0), sample[1].clamp(-1.0, 1.0)];
                    orders[i] = order_for(&net.nodes[i], &clipped, obs[k][i].inventory())?;
                }
                let result = envs[k].step(net, &orders)?;
                out.rewards[step] = result.team_reward * self.config.reward_scale;
                out.profits[k] += result.team_reward;
                out.dones[step] = result.done;
                obs[k] = result.observations;
            }
        }
        Ok(out)
    }

    /// Advantages and value targets, `steps x streams` each.
    pub fn advantages(&self, rollout: &Rollout) -> Result<(Array2<f64>, Array2<f64>), MarlError> {
        let (steps, streams) = rollout.values.dim();
        let t_len = rollout.episode_len;
        let mut adv = Array2::zeros((steps, streams));
        let mut ret = Array2::zeros((steps, streams));
        for ep in 0..rollout.episodes {
            let range = ep * t_len..(ep + 1) * t_len;
            let rewards = &rollout.rewards[range.clone()];
            for c in 0..streams {
                let vals: Vec<f64> = rollout.values.slice(s![range.clone(), c]).to_vec();
                let (a, r) = gae(rewards, &vals, rollout.bootstrap[[ep, c]], self.config.gamma, self.config.gae_lambda)?;
                adv.slice_mut(s![range.clone(), c]).assign(&ndarray::Array1::from(a));
                ret.slice_mut(s![range.clone(), c]).assign(&ndarray::Array1::from(r));
            }
        }
        Ok((adv, ret))
    }

    /// Collects a batch, runs one shuffled pass of minibatch updates and
    /// adapts the KL coefficient. On error the trainer is left unchanged.
    pub fn train_iteration(&mut self) -> Result<IterationStats, MarlError> {
        let backup = (
            self.actors.clone(),
            self.actor_opts.clone(),
            self.critic.clone(),
            self.critic_opt.clone(),
        );
        match self.train_iteration_inner() {
            Ok(stats) => Ok(stats),
            Err(e) => {
                (self.actors, self.actor_opts, self.critic, self.critic_opt) = backup;
                Err(e)
            }
        }
    }

    fn train_iteration_inner(&mut self) -> Result<IterationStats, MarlError> {
        let start = Instant::now();
        let iteration = self.iteration;
        let rollout = self.rollout(iteration)?;
        let (adv, ret) = self.advantages(&rollout)?;
        let old_log_stds: Vec<Vec<f64>> = self.actors.iter().map(Actor::effective_log_std).collect();

        let mut order: Vec<usize> = (0..rollout.steps()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[TAG_SHUFFLE, iteration as u64]));
        order.shuffle(&mut shuffle_rng);

        let beta = self.kl_coeff;
        let mut actor_grads: Vec<Actor> = self.actors.iter().map(Actor::zeros_like).collect();
        let mut critic_grads = self.critic.zeros_like();
        let (mut policy_loss, mut value_loss, mut kl_sum, mut clip_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut minibatches = 0usize;
        for chunk in order.chunks(self.config.minibatch_steps) {
            let mb = self.minibatch_update(
                &rollout,
                chunk,
                &adv,
                &ret,
                &old_log_stds,
                beta,
                &mut actor_grads,
                &mut critic_grads,
            )?;
            policy_loss += mb.0;
            value_loss += mb.1;
            kl_sum += mb.2;
            clip_sum += mb.3;
            minibatches += 1;
        }
        let denom = minibatches.max(1) as f64;
        let kl = kl_sum / denom;
        self.kl_coeff = kl_update(beta, kl, self.config.kl_target);
        self.iteration += 1;
        let stats = IterationStats {
            iteration: self.iteration,
            mean_profit: rollout.profits.iter().sum::<f64>() / rollout.profits.len().max(1) as f64,
            entropy: self.mean_entropy(),
            policy_loss: policy_loss / denom,
            value_loss: value_loss / denom,
            kl,
            kl_coeff: beta,
            clip_fraction: clip_sum / denom,
            env_steps: rollout.steps(),
            seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Returns `(policy loss, value loss, kl, clip fraction)` for the minibatch.
    #[allow(clippy::too_many_arguments)]
    fn minibatch_update(
        &mut self,
        rollout: &Rollout,
        steps: &[usize],
        adv: &Array2<f64>,
        ret: &Array2<f64>,
        old_log_stds: &[Vec<f64>],
        beta: f64,
        actor_grads: &mut [Actor],
        critic_grads: &mut Critic,
    ) -> Result<(f64, f64, f64, f64), MarlError> {
        let n = rollout.nodes;
        let b = steps.len();
        let rows: Vec<usize> = steps.iter().flat_map(|&s| (0..n).map(move |i| s * n + i)).collect();
        let obs = rollout.obs.select(Axis(0), &rows);
        let samples = rollout.samples.select(Axis(0), &rows);
        let old_means = rollout.old_means.select(Axis(0), &rows);
        let adv_mb = adv.select(Axis(0), steps);
        let ret_mb = ret.select(Axis(0), steps);

        // normalize advantages over the minibatch
        let count = adv_mb.len() as f64;
        let mean = adv_mb.sum() / count;
        let var = adv_mb.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / count;
        let adv_norm = adv_mb.mapv(|a| (a - mean) / (var.sqrt() + 1e-8));

        let inv_agents = 1.0 / n as f64;
        let (mut policy_loss, mut kl_total, mut clip_total) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let actor = &self.actors[i];
            let (means, tape) = actor.forward_batch(obs.slice(s![i..;n, ..]))?;
            let ls = actor.effective_log_std();
            let stream = self.critic.stream_of(i);
            let mut logp_new = Vec::with_capacity(b);
            let mut logp_old = Vec::with_capacity(b);
            let mut a_i = Vec::with_capacity(b);
            for k in 0..b {
                let row = k * n + i;
                let mean_k = means.row(k).to_vec();
                let sample_k = samples.row(row).to_vec();
                logp_new.push(gaussian_log_prob(&mean_k, &ls, &sample_k));
                logp_old.push(rollout.old_logp[steps[k] * n + i]);
                a_i.push(adv_norm[[k, stream]]);
            }
            let ppo = ppo_policy_loss(&logp_new, &logp_old, &a_i, self.config.clip)?;
            let grads = &mut actor_grads[i];
            grads.fill_zero();
            let mut d_mean = Array2::<f64>::zeros((b, ACTION_DIM));
            let mut d_ls = vec![0.0; ACTION_DIM];
            let mut kl_i = 0.0;
            for k in 0..b {
                let row = k * n + i;
                let mean_k = means.row(k).to_vec();
                let sample_k = samples.row(row).to_vec();
                let old_k = old_means.row(row).to_vec();
                let (gm, gl) = gaussian_log_prob_grad(&mean_k, &ls, &sample_k);
                let (km, kls) = gaussian_kl_grad(&old_k, &old_log_stds[i], &mean_k, &ls);
                kl_i += gaussian_kl(&old_k, &old_log_stds[i], &mean_k, &ls);
                for j in 0..ACTION_DIM {
                    d_mean[[k, j]] = (ppo.grad_logp[k] * gm[j] + beta * km[j] / b as f64) * inv_agents;
                    d_ls[j] += (ppo.grad_logp[k] * gl[j] + beta * kls[j] / b as f64) * inv_agents;
                }
            }
            for (j, g) in d_ls.iter_mut().enumerate() {
                *g -= self.config.entropy_coeff * inv_agents;
                // clamped log std passes no gradient outside its range
                let raw = actor.log_std[j];
                if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    *g = 0.0;
                }
            }
            actor.net.backward(&tape, &d_mean, &mut grads.net)?;
            grads.log_std.copy_from_slice(&d_ls);
            policy_loss += ppo.loss * inv_agents;
            kl_total += kl_i / b as f64 * inv_agents;
            clip_total += ppo.clip_fraction * inv_agents;
        }

        let (values, tape) = self.critic.forward(obs.view())?;
        let diff = &values - &ret_mb;
        let value_loss = diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64;
        let d_values = diff.mapv(|d| 2.0 * self.config.vf_coeff * d / values.len() as f64);
        critic_grads.fill_zero();
        self.critic.backward(&tape, &d_values, critic_grads)?;

        if !policy_loss.is_finite() || !value_loss.is_finite() {
            return Err(MarlError::NonFinite("loss"));
        }
        if actor_grads.iter().any(|g| !g.all_finite()) || !critic_grads.all_finite() {
            return Err(MarlError::NonFinite("gradient"));
        }
        for ((actor, opt), grads) in self.actors.iter_mut().zip(&mut self.actor_opts).zip(actor_grads.iter()) {
            opt.step(actor, grads)?;
        }
        self.critic_opt.step(&mut self.critic, critic_grads)?;
        Ok((policy_loss, value_loss, kl_total, clip_total))
    }

    /// Runs `iterations` more iterations, calling `on_iter` after each.
    pub fn train<F: FnMut(&IterationStats)>(&mut self, iterations: usize, mut on_iter: F) -> Result<(), MarlError> {
        for _ in 0..iterations {
            let stats = self.train_iteration()?;
            on_iter(&stats);
        }
        Ok(())
    }
}
