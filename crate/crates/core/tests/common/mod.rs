//! Helpers shared by the integration tests: an independent reference
//! stepper, finite-difference gradient checks and a brute-force GAE.
#![allow(dead_code)]

use echelon::baseline::{optimize_static, SearchOptions};
use echelon::env::{poisson_pmf, sample_poisson, EnvState};
use echelon::gcn::{global_mean_pool, mean_pool_backward, mean_pool_batch, normalize_adjacency, GcnStack};
use echelon::marl::{Critic, Variant};
use echelon::nn::{gaussian_kl, gaussian_kl_grad, gaussian_log_prob, gaussian_log_prob_grad, ParamSet};
use echelon::policy::Actor;
use echelon::supply_net::{adjacency, load_network, DemandModel, SupplyNetwork};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Poisson draw by CDF inversion on one uniform, written out term by term.
/// Consumes randomness exactly like the simulator for rates up to 30.
pub fn ref_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> i64 {
    assert!(lambda <= 30.0, "reference sampler only covers small rates");
    if lambda == 0.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    let mut k = 0i64;
    let mut term = (-lambda).exp();
    let mut cdf = term;
    while u > cdf && term > 0.0 {
        k += 1;
        term = term * lambda / k as f64;
        cdf += term;
    }
    k
}

/// Proportional split with exact integer arithmetic, then one unit at a
/// time to the slot with the largest remainder (lowest node id on ties).
pub fn ref_allocate(available: i64, requests: &[i64], ids: &[usize]) -> Vec<i64> {
    let total: i64 = requests.iter().sum();
    if total <= available {
        return requests.to_vec();
    }
    let mut out: Vec<i64> = requests.iter().map(|&r| available * r / total).collect();
    let mut rem: Vec<i64> = requests.iter().map(|&r| available * r % total).collect();
    let mut left = available - out.iter().sum::<i64>();
    while left > 0 {
        let mut best = 0;
        for k in 1..requests.len() {
            if rem[k] > rem[best] || (rem[k] == rem[best] && ids[k] < ids[best]) {
                best = k;
            }
        }
        out[best] += 1;
        rem[best] = i64::MIN;
        left -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefInFlight {
    pub dest: usize,
    pub qty: i64,
    pub due: usize,
}

/// Straight transcription of the period dynamics, kept separate from the
/// simulator on purpose.
pub struct RefEnv {
    pub t: usize,
    pub v: Vec<i64>,
    /// `owed[i][k]`: units node `i` still owes its `k`-th downstream slot.
    pub owed: Vec<Vec<i64>>,
    pub transit: Vec<RefInFlight>,
    pub d_hist: Vec<Vec<i64>>,
    pub o_hist: Vec<Vec<i64>>,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefStep {
    pub reward: f64,
    pub shipped: Vec<i64>,
    pub arrivals: Vec<i64>,
    pub demand: Vec<i64>,
    pub lost: Vec<i64>,
}

impl RefEnv {
    pub fn new(net: &SupplyNetwork, seed: u64) -> Self {
        let n = net.nodes.len();
        Self {
            t: 0,
            v: net.nodes.iter().map(|p| p.initial_inventory).collect(),
            owed: net
                .nodes
                .iter()
                .map(|p| vec![0; if p.downstream.is_empty() { 1 } else { p.downstream.len() }])
                .collect(),
            transit: Vec::new(),
            d_hist: vec![vec![0; net.history]; n],
            o_hist: vec![vec![0; net.history]; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn suppliers_of(net: &SupplyNetwork, i: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, p) in net.nodes.iter().enumerate() {
            for (k, &d) in p.downstream.iter().enumerate() {
                if d == i {
                    out.push((u, k));
                }
            }
        }
        out
    }

    /// `[v, b, p, d history, o history]` in units.
    pub fn observation(&self, net: &SupplyNetwork, i: usize) -> Vec<f64> {
        let b: i64 = self.owed[i].iter().sum();
        let mut p: i64 = self.transit.iter().filter(|s| s.dest == i).map(|s| s.qty).sum();
        for (u, k) in Self::suppliers_of(net, i) {
            p += self.owed[u][k];
        }
        let mut obs = vec![self.v[i] as f64, b as f64, p as f64];
        obs.extend(self.d_hist[i].iter().map(|&x| x as f64));
        obs.extend(self.o_hist[i].iter().map(|&x| x as f64));
        obs
    }

    pub fn step(&mut self, net: &SupplyNetwork, raw_orders: &[i64]) -> RefStep {
        let n = net.nodes.len();
        let t = self.t;
        let o: Vec<i64> = (0..n)
            .map(|i| raw_orders[i].max(0).min(net.nodes[i].max_order))
            .collect();

        let mut arrivals = vec![0i64; n];
        let mut keep = Vec::new();
        for s in self.transit.drain(..) {
            if s.due == t {
                arrivals[s.dest] += s.qty;
            } else {
                keep.push(s);
            }
        }
        self.transit = keep;

        let mut demand: Vec<Vec<i64>> = Vec::new();
        for p in &net.nodes {
            if p.downstream.is_empty() {
                let c = match net.demand_model {
                    DemandModel::Poisson => ref_poisson(&mut self.rng, net.lambda_d),
                    DemandModel::Constant => net.lambda_d.round() as i64,
                };
                demand.push(vec![c]);
            } else {
                demand.push(p.downstream.iter().map(|&d| o[d]).collect());
            }
        }

        let mut g: Vec<Vec<i64>> = Vec::new();
        for i in 0..n {
            let req: Vec<i64> = (0..demand[i].len()).map(|k| self.owed[i][k] + demand[i][k]).collect();
            let have = self.v[i] + arrivals[i];
            let ids: Vec<usize> = if net.nodes[i].downstream.is_empty() {
                vec![0]
            } else {
                net.nodes[i].downstream.clone()
            };
            let ship = ref_allocate(have, &req, &ids);
            for k in 0..req.len() {
                self.owed[i][k] = req[k] - ship[k];
            }
            self.v[i] = have - ship.iter().sum::<i64>();
            g.push(ship);
        }

        for i in 0..n {
            for (k, &d) in net.nodes[i].downstream.iter().enumerate() {
                if g[i][k] > 0 {
                    let tau = ref_poisson(&mut self.rng, net.lambda_l).max(1) as usize;
                    self.transit.push(RefInFlight {
                        dest: d,
                        qty: g[i][k],
                        due: t + tau,
                    });
                }
            }
        }
        for i in 0..n {
            let is_source = !net.nodes.iter().any(|p| p.downstream.contains(&i));
            if is_source && o[i] > 0 {
                let tau = ref_poisson(&mut self.rng, net.lambda_l).max(1) as usize;
                self.transit.push(RefInFlight {
                    dest: i,
                    qty: o[i],
                    due: t + tau,
                });
            }
        }

        let mut reward = 0.0;
        let mut lost = vec![0; n];
        let mut shipped = vec![0; n];
        let mut dem = vec![0; n];
        for (i, p) in net.nodes.iter().enumerate() {
            if self.v[i] > p.max_inventory {
                lost[i] = self.v[i] - p.max_inventory;
                self.v[i] = p.max_inventory;
            }
            shipped[i] = g[i].iter().sum();
            dem[i] = demand[i].iter().sum();
            let b: i64 = self.owed[i].iter().sum();
            reward += p.price * shipped[i] as f64
                - p.order_cost * o[i] as f64
                - p.stock_cost * self.v[i] as f64
                - p.backlog_cost * b as f64;
            if net.history > 0 {
                self.d_hist[i].insert(0, dem[i]);
                self.d_hist[i].pop();
                self.o_hist[i].insert(0, o[i]);
                self.o_hist[i].pop();
            }
        }
        self.t += 1;
        RefStep {
            reward,
            shipped,
            arrivals,
            demand: dem,
            lost,
        }
    }
}

/// `max |a - b| / max(|a|, |b|)` over the whole vector, using norms.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central difference of `f` with respect to entry `k` of `x`.
pub fn central_diff(x: &mut [f64], k: usize, h: f64, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[k];
    x[k] = orig + h;
    let up = f(x);
    x[k] = orig - h;
    let down = f(x);
    x[k] = orig;
    (up - down) / (2.0 * h)
}

/// Advantages as the explicit double sum over future TD errors.
pub fn gae_double_sum(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let v = |t: usize| if t < n { values[t] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..n - t {
                let delta = rewards[t + l] + gamma * v(t + l + 1) - v(t + l);
                total += (gamma * lambda).powi(l as i32) * delta;
            }
            total
        })
        .collect()
}

// ---------------------------------------------------------------------------
// simulator versus reference

pub fn random_orders(net: &SupplyNetwork, rng: &mut ChaCha8Rng) -> Vec<i64> {
    net.nodes
        .iter()
        .map(|p| rng.gen_range(-5..=p.max_order + 5))
        .collect()
}

fn sorted_pipeline(state: &EnvState) -> Vec<(usize, i64, usize)> {
    let mut v: Vec<_> = state.pipeline.iter().map(|s| (s.dest, s.qty, s.arrive_at)).collect();
    v.sort();
    v
}

fn sorted_ref_pipeline(env: &RefEnv) -> Vec<(usize, i64, usize)> {
    let mut v: Vec<_> = env.transit.iter().map(|s| (s.dest, s.qty, s.due)).collect();
    v.sort();
    v
}

/// Steps the simulator and the reference side by side under random orders
/// and reports the first disagreement.
pub fn compare_with_reference(name: &str, episodes: u64, steps: usize) -> Result<(), String> {
    let mut net = SupplyNetwork::builtin(name).map_err(|e| e.to_string())?;
    net.horizon = steps;
    for ep in 0..episodes {
        let seed = 10_000 + ep;
        let (mut state, mut obs) = EnvState::reset(&net, seed);
        let mut reference = RefEnv::new(&net, seed);
        let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for t in 0..steps {
            let at = |what: &str| format!("{name} episode {ep} step {t}: {what} differs");
            for (i, o) in obs.iter().enumerate() {
                if o.values != reference.observation(&net, i) {
                    return Err(at(&format!("observation of node {i}")));
                }
            }
            let orders = random_orders(&net, &mut order_rng);
            let got = state.step(&net, &orders).map_err(|e| e.to_string())?;
            let want = reference.step(&net, &orders);
            if got.team_reward != want.reward {
                return Err(at("reward"));
            }
            for (i, row) in got.info.iter().enumerate() {
                if (row.shipped, row.arrivals, row.demand, row.lost)
                    != (want.shipped[i], want.arrivals[i], want.demand[i], want.lost[i])
                {
                    return Err(at(&format!("ledger of node {i}")));
                }
            }
            if state.inventory != reference.v {
                return Err(at("inventory"));
            }
            if state.backlog != reference.owed {
                return Err(at("backlog"));
            }
            if sorted_pipeline(&state) != sorted_ref_pipeline(&reference) {
                return Err(at("pipeline"));
            }
            if got.done != (t + 1 == steps) {
                return Err(at("done flag"));
            }
            obs = got.observations;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradient checks

pub const GRAD_COORDS: usize = 40;
pub const GRAD_STEP: f64 = 1e-5;

fn flat<P: ParamSet>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

fn set_flat<P: ParamSet>(p: &mut P, values: &[f64]) {
    let mut k = 0;
    for t in p.tensors_mut() {
        let len = t.len();
        t.copy_from_slice(&values[k..k + len]);
        k += len;
    }
}

/// Compares `analytic` against central differences on sampled coordinates
/// (at least one per tensor) and along two random unit directions; returns
/// the worst relative error.
pub fn check_params<P: ParamSet + Clone>(
    model: &P,
    analytic: &P,
    loss: &dyn Fn(&P) -> f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut theta = flat(model);
    let grad = flat(analytic);
    assert_eq!(theta.len(), grad.len());
    let mut coords: Vec<usize> = Vec::new();
    let mut offset = 0;
    for t in model.tensors() {
        coords.push(offset + rng.gen_range(0..t.len()));
        offset += t.len();
    }
    while coords.len() < GRAD_COORDS {
        coords.push(rng.gen_range(0..theta.len()));
    }
    let mut scratch = model.clone();
    let mut f = |x: &[f64]| {
        set_flat(&mut scratch, x);
        loss(&scratch)
    };
    let numeric: Vec<f64> = coords
        .iter()
        .map(|&k| central_diff(&mut theta, k, GRAD_STEP, &mut f))
        .collect();
    let picked: Vec<f64> = coords.iter().map(|&k| grad[k]).collect();
    let mut worst = rel_error(&picked, &numeric);

    for _ in 0..2 {
        let dir: Vec<f64> = (0..theta.len()).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let along = |s: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(t, d)| t + s * d / norm).collect() };
        let numeric = (f(&along(GRAD_STEP)) - f(&along(-GRAD_STEP))) / (2.0 * GRAD_STEP);
        let analytic_dir: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d / norm).sum();
        worst = worst.max(rel_error(&[analytic_dir], &[numeric]));
    }
    worst
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.5))
}

/// Actor with its Gaussian head under a weighted log-likelihood plus KL
/// penalty, the shape of the policy update.
pub fn actor_gradient_error(seed: u64) -> f64 {
    let (d, b) = (9, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = Actor::new(d, &mut rng);
    actor.log_std = vec![rng.gen_range(-1.0..0.5), rng.gen_range(-1.0..0.5)];
    let obs = random_matrix(b, d, &mut rng);
    let actions = random_matrix(b, 2, &mut rng);
    let old_means = random_matrix(b, 2, &mut rng) * 0.5;
    let old_ls = [rng.gen_range(-1.0..0.5), rng.gen_range(-1.0..0.5)];
    let w: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();

    let loss = |a: &Actor| -> f64 {
        let (means, _) = a.forward_batch(obs.view()).unwrap();
        let ls = a.effective_log_std();
        (0..b)
            .map(|k| {
                let m = means.row(k).to_vec();
                w[k] * gaussian_log_prob(&m, &ls, &actions.row(k).to_vec())
                    + u[k] * gaussian_kl(&old_means.row(k).to_vec(), &old_ls, &m, &ls)
            })
            .sum()
    };

    let (means, tape) = actor.forward_batch(obs.view()).unwrap();
    let ls = actor.effective_log_std();
    let mut grads = actor.zeros_like();
    let mut d_mean = Array2::zeros((b, 2));
    for k in 0..b {
        let m = means.row(k).to_vec();
        let (gm, gl) = gaussian_log_prob_grad(&m, &ls, &actions.row(k).to_vec());
        let (km, kl) = gaussian_kl_grad(&old_means.row(k).to_vec(), &old_ls, &m, &ls);
        for j in 0..2 {
            d_mean[[k, j]] = w[k] * gm[j] + u[k] * km[j];
            grads.log_std[j] += w[k] * gl[j] + u[k] * kl[j];
        }
    }
    actor.net.backward(&tape, &d_mean, &mut grads.net).unwrap();
    check_params(&actor, &grads, &loss, &mut rng)
}

/// Critic of `variant` on net6 under a random linear functional of its values.
pub fn critic_gradient_error(variant: Variant, seed: u64) -> f64 {
    let net = SupplyNetwork::builtin("net6").unwrap();
    let (n, d, b) = (net.len(), net.obs_dim(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critic = Critic::new(variant, &net, 32, &mut rng).unwrap();
    let obs = random_matrix(b * n, d, &mut rng) * 0.5;
    let coeffs = random_matrix(b, critic.streams(), &mut rng);
    let loss = |c: &Critic| -> f64 { (c.values(obs.view()).unwrap() * &coeffs).sum() };
    let (_, tape) = critic.forward(obs.view()).unwrap();
    let mut grads = critic.zeros_like();
    critic.backward(&tape, &coeffs, &mut grads).unwrap();
    check_params(&critic, &grads, &loss, &mut rng)
}

/// GCN stack plus mean pooling on net18; returns the worst relative errors
/// for the weights and for the node features.
pub fn gcn_gradient_error(seed: u64) -> (f64, f64) {
    let net = SupplyNetwork::builtin("net18").unwrap();
    let a_hat = normalize_adjacency(&adjacency(&net).symmetric).unwrap();
    let (n, d, b) = (net.len(), net.obs_dim(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gcn = GcnStack::new(a_hat, d, 32, &mut rng);
    let x = random_matrix(b * n, d, &mut rng);
    let coeffs = random_matrix(b, 32, &mut rng);
    let pooled_loss = |g: &GcnStack, x: &Array2<f64>| -> f64 {
        let (h, _) = g.forward(x.view()).unwrap();
        (mean_pool_batch(&h, n).unwrap() * &coeffs).sum()
    };

    let (_, tape) = gcn.forward(x.view()).unwrap();
    let mut grads = gcn.zeros_like();
    let d_x = gcn.backward(&tape, &mean_pool_backward(&coeffs, n), &mut grads).unwrap();
    let weights = check_params(&gcn, &grads, &|g: &GcnStack| pooled_loss(g, &x), &mut rng);

    let mut xs = x.clone().into_raw_vec_and_offset().0;
    let coords: Vec<usize> = (0..GRAD_COORDS).map(|_| rng.gen_range(0..xs.len())).collect();
    let mut f = |v: &[f64]| pooled_loss(&gcn, &Array2::from_shape_vec((b * n, d), v.to_vec()).unwrap());
    let numeric: Vec<f64> = coords
        .iter()
        .map(|&k| central_diff(&mut xs, k, GRAD_STEP, &mut f))
        .collect();
    let analytic: Vec<f64> = coords.iter().map(|&k| d_x[[k / d, k % d]]).collect();
    (weights, rel_error(&analytic, &numeric))
}

// ---------------------------------------------------------------------------
// permutations

fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(x.dim(), |(r, c)| x[[perm[r], c]])
}

fn permute_square(a: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn(a.dim(), |(r, c)| a[[perm[r], perm[c]]])
}

/// Worst equivariance error of the GCN and worst invariance error of the
/// pooled embedding over `trials` random relabelings of net18.
pub fn permutation_errors(trials: usize, seed: u64) -> (f64, f64) {
    let net = SupplyNetwork::builtin("net18").unwrap();
    let (n, d) = (net.len(), net.obs_dim());
    let raw = adjacency(&net).symmetric;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gcn = GcnStack::new(normalize_adjacency(&raw).unwrap(), d, 32, &mut rng);
    let (mut equiv, mut invar) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..2.0));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let (h, _) = gcn.forward(x.view()).unwrap();
        let relabeled = GcnStack {
            weights: gcn.weights.clone(),
            a_hat: normalize_adjacency(&permute_square(&raw, &perm)).unwrap(),
        };
        let (h_perm, _) = relabeled.forward(permute_rows(&x, &perm).view()).unwrap();
        let expected = permute_rows(&h, &perm);
        for (a, b) in h_perm.iter().zip(expected.iter()) {
            equiv = equiv.max((a - b).abs());
        }
        let p0 = global_mean_pool(h.view()).unwrap();
        let p1 = global_mean_pool(h_perm.view()).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            invar = invar.max((a - b).abs());
        }
    }
    (equiv, invar)
}

// ---------------------------------------------------------------------------
// Poisson fidelity

/// Total variation distance between `draws` samples and the PMF, with any
/// mass beyond the histogram counted in full.
pub fn poisson_total_variation(lambda: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; 200];
    for _ in 0..draws {
        counts[sample_poisson(&mut rng, lambda).unwrap() as usize] += 1;
    }
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (k, &c) in counts.iter().enumerate() {
        let p = poisson_pmf(lambda, k as u64);
        covered += p;
        tv += (c as f64 / draws as f64 - p).abs();
    }
    0.5 * (tv + (1.0 - covered).max(0.0))
}

// ---------------------------------------------------------------------------
// static baseline on the one-node toy

pub const TOY: &str = "lambda_d = 5\nlambda_l = 0\nhorizon = 50\nhistory = 3\ndemand_model = constant\n\
node cost price max_inventory max_order initial_inventory target_inventory stock_cost backlog_cost downstream\n\
0 1.0 3.0 20 20 0 10 0.5 2.5 none\n";

pub fn toy() -> SupplyNetwork {
    load_network(TOY).unwrap()
}

/// Profit of a static policy computed with the reference stepper and an
/// independently written (s, S) rule.
pub fn reference_profit(net: &SupplyNetwork, levels: &[(i64, i64)], seed: u64) -> f64 {
    let mut env = RefEnv::new(net, seed);
    let mut total = 0.0;
    for _ in 0..net.horizon {
        let orders: Vec<i64> = levels
            .iter()
            .enumerate()
            .map(|(i, &(s, big_s))| {
                let v = env.v[i];
                if v <= s {
                    (big_s - v).max(0).min(net.nodes[i].max_order)
                } else {
                    0
                }
            })
            .collect();
        total += env.step(net, &orders).reward;
    }
    total
}

/// Every `(s, S)` with `0 <= s <= S <= 20` and its reference profit.
pub fn toy_grid(net: &SupplyNetwork) -> Vec<((i64, i64), f64)> {
    let mut out = Vec::new();
    for s in 0..=20 {
        for big_s in s..=20 {
            out.push(((s, big_s), reference_profit(net, &[(s, big_s)], 0)));
        }
    }
    out
}

#[derive(Debug)]
pub struct ToySearchReport {
    pub grid_best: f64,
    pub found: f64,
    pub found_policy: (i64, i64),
    /// `|J(s*, S*) - J(s*, S* +- 1)|`: what one unit of order-up-to slack is worth.
    pub slack: f64,
    pub best_order_up_to: Vec<i64>,
    pub monotone: bool,
    pub truncated: bool,
}

pub fn toy_search(seed: u64) -> ToySearchReport {
    let net = toy();
    let table = toy_grid(&net);
    let grid_best = table.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let opts = SearchOptions {
        n_starts: 20,
        budget: 5000,
        episodes: 1,
        seed,
        ..SearchOptions::default()
    };
    let res = optimize_static(&net, &opts);
    let (s, big_s) = res.policy.levels[0];
    let profit_at = |p: (i64, i64)| table.iter().find(|r| r.0 == p).map(|r| r.1).unwrap();
    let neighbour = if big_s < 20 { (s, big_s + 1) } else { (s, big_s - 1) };
    ToySearchReport {
        grid_best,
        found: res.profit,
        found_policy: (s, big_s),
        slack: (profit_at((s, big_s)) - profit_at(neighbour)).abs(),
        best_order_up_to: table.iter().filter(|r| r.1 == grid_best).map(|r| r.0 .1).collect(),
        monotone: res.starts.iter().all(|r| r.accepted.windows(2).all(|w| w[1] >= w[0])),
        truncated: res.truncated,
    }
}
