//! Periodic-review supply-chain simulator.
//!
//! Each call to [`EnvState::step`] advances one period in a fixed event order:
//!
//! 1. arrivals: shipments whose `arrive_at` equals the current step land on hand;
//! 2. demand: retail nodes draw customer demand, every other node sees each
//!    downstream node's order as demand on that edge;
//! 3. shipping: a node ships at most `backlog + demand` per edge and at most
//!    `on_hand + arrivals` in total, splitting scarce stock proportionally
//!    with largest-remainder rounding (ties to the lower node index);
//! 4. ledger: inventory and per-edge backlogs are updated, shipments enter
//!    the pipeline with lead time `max(1, Poisson(lambda_l))`, and orders
//!    placed by source nodes enter it from the unlimited external supplier;
//! 5. capacity: on-hand stock above `max_inventory` is discarded and logged;
//! 6. reward: `sum_i P g - C o_r - V v - B b` over all nodes.
//!
//! Random draws happen in a fixed order (retail demands by node, then lead
//! times by shipping node and edge, then lead times for external orders),
//! so a seed plus an action sequence fully determines an episode.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::supply_net::{DemandModel, SupplyNetwork};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("Poisson rate must be finite and non-negative, got {0}")]
    NegativeRate(f64),
    #[error("step called after the episode finished at t = {0}")]
    EpisodeDone(usize),
    #[error("expected {expected} orders, got {got}")]
    OrderCount { expected: usize, got: usize },
    #[error("agent index {index} out of range for {n} nodes")]
    AgentIndex { index: usize, n: usize },
}

/// Rates at or below this use CDF inversion; larger ones defer to `rand_distr`.
const INVERSION_LIMIT: f64 = 30.0;

/// Draws from Poisson(`lambda`), PMF `e^-lambda lambda^k / k!`.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u64, EnvError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(EnvError::NegativeRate(lambda));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda > INVERSION_LIMIT {
        let dist = rand_distr::Poisson::new(lambda).map_err(|_| EnvError::NegativeRate(lambda))?;
        return Ok(rng.sample(dist) as u64);
    }
    let u: f64 = rng.gen();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    Ok(k)
}

/// Poisson probability mass at `k`.
pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let ln = -lambda + k as f64 * lambda.ln() - ln_factorial(k);
    ln.exp()
}

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shipment {
    /// Shipping node, or `None` for the external supplier.
    pub origin: Option<usize>,
    pub dest: usize,
    pub qty: i64,
    pub arrive_at: usize,
}

/// Raw per-agent observation `[v, b, p, d^-1..d^-M, o_r^-1..o_r^-M]` in units.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn inventory(&self) -> f64 {
        self.values[0]
    }

    pub fn backlog(&self) -> f64 {
        self.values[1]
    }

    pub fn pipeline(&self) -> f64 {
        self.values[2]
    }

    pub fn demand_history(&self) -> &[f64] {
        let m = (self.values.len() - 3) / 2;
        &self.values[3..3 + m]
    }

    pub fn order_history(&self) -> &[f64] {
        let m = (self.values.len() - 3) / 2;
        &self.values[3 + m..]
    }

    /// Divides stock-like entries (on hand, backlog, pipeline, past orders)
    /// by `stock_scale` and past demands by `demand_scale`.
    pub fn normalized(&self, stock_scale: f64, demand_scale: f64) -> Vec<f64> {
        let m = (self.values.len() - 3) / 2;
        self.values
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if (3..3 + m).contains(&k) {
                    x / demand_scale
                } else {
                    x / stock_scale
                }
            })
            .collect()
    }
}

/// Fixed per-node input scales, frozen at training time so a policy sees the
/// same feature scaling when evaluated under a different demand rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalizer {
    pub stock_scale: Vec<f64>,
    pub demand_scale: Vec<f64>,
}

impl ObsNormalizer {
    /// Stock entries over `max_inventory`. Retail demand over `2 * lambda_d`;
    /// upstream "demand" is downstream orders, so it shares the stock scale.
    pub fn for_network(net: &SupplyNetwork) -> Self {
        let stock_scale: Vec<f64> = net
            .nodes
            .iter()
            .map(|n| (n.max_inventory as f64).max(1.0))
            .collect();
        let demand_scale = (0..net.len())
            .map(|i| {
                if net.is_retail(i) {
                    (2.0 * net.lambda_d).max(1.0)
                } else {
                    stock_scale[i]
                }
            })
            .collect();
        Self {
            stock_scale,
            demand_scale,
        }
    }

    pub fn apply(&self, i: usize, obs: &Observation) -> Vec<f64> {
        obs.normalized(self.stock_scale[i], self.demand_scale[i])
    }

    /// Writes all agents' normalized observations row by row into `out`.
    pub fn apply_all_into(&self, obs: &[Observation], out: &mut [f64]) {
        let d = obs.first().map_or(0, |o| o.values.len());
        for (i, o) in obs.iter().enumerate() {
            let m = (d - 3) / 2;
            let row = &mut out[i * d..(i + 1) * d];
            for (k, (&x, r)) in o.values.iter().zip(row.iter_mut()).enumerate() {
                *r = if (3..3 + m).contains(&k) {
                    x / self.demand_scale[i]
                } else {
                    x / self.stock_scale[i]
                };
            }
        }
    }
}

/// Concatenates per-agent vectors in node order.
pub fn global_state<T: AsRef<[f64]>>(observations: &[T]) -> Vec<f64> {
    observations
        .iter()
        .flat_map(|o| o.as_ref().iter().copied())
        .collect()
}

impl AsRef<[f64]> for Observation {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// One node's bookkeeping for a single period.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub demand: i64,
    pub arrivals: i64,
    pub shipped: i64,
    pub order: i64,
    pub inventory: i64,
    pub backlog: i64,
    pub lost: i64,
    pub revenue: f64,
    pub order_cost: f64,
    pub holding_cost: f64,
    pub backlog_cost: f64,
}

impl NodeLedger {
    pub fn profit(&self) -> f64 {
        self.revenue - self.order_cost - self.holding_cost - self.backlog_cost
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub team_reward: f64,
    pub done: bool,
    pub info: Vec<NodeLedger>,
}

/// Recombines per-node ledgers into the team reward.
pub fn ledger_reward(info: &[NodeLedger]) -> f64 {
    info.iter().map(NodeLedger::profit).sum()
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub t: usize,
    pub inventory: Vec<i64>,
    /// `backlog[i][k]`: units node `i` owes its `k`-th downstream node; retail
    /// nodes carry a single slot for customers.
    pub backlog: Vec<Vec<i64>>,
    pub pipeline: Vec<Shipment>,
    /// Most recent first, length `M`.
    pub demand_hist: Vec<VecDeque<i64>>,
    pub order_hist: Vec<VecDeque<i64>>,
    done: bool,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn reset(net: &SupplyNetwork, seed: u64) -> (Self, Vec<Observation>) {
        let n = net.len();
        let m = net.history;
        let state = Self {
            t: 0,
            inventory: net.nodes.iter().map(|p| p.initial_inventory).collect(),
            backlog: net
                .nodes
                .iter()
                .map(|p| vec![0; p.downstream.len().max(1)])
                .collect(),
            pipeline: Vec::new(),
            demand_hist: vec![VecDeque::from(vec![0; m]); n],
            order_hist: vec![VecDeque::from(vec![0; m]); n],
            done: net.horizon == 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let obs = state.observe_all(net);
        (state, obs)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn total_backlog(&self, i: usize) -> i64 {
        self.backlog[i].iter().sum()
    }

    /// Stock on its way to `i`: in-flight shipments plus units still
    /// backlogged for `i` at its suppliers.
    pub fn pipeline_inventory(&self, net: &SupplyNetwork, i: usize) -> i64 {
        let in_flight: i64 = self
            .pipeline
            .iter()
            .filter(|s| s.dest == i)
            .map(|s| s.qty)
            .sum();
        let owed: i64 = net
            .upstream(i)
            .iter()
            .map(|&u| {
                let k = net.nodes[u]
                    .downstream
                    .iter()
                    .position(|&d| d == i)
                    .expect("upstream edge exists");
                self.backlog[u][k]
            })
            .sum();
        in_flight + owed
    }

    pub fn observe(&self, net: &SupplyNetwork, i: usize) -> Result<Observation, EnvError> {
        if i >= net.len() {
            return Err(EnvError::AgentIndex {
                index: i,
                n: net.len(),
            });
        }
        let mut values = Vec::with_capacity(3 + 2 * net.history);
        values.push(self.inventory[i] as f64);
        values.push(self.total_backlog(i) as f64);
        values.push(self.pipeline_inventory(net, i) as f64);
        values.extend(self.demand_hist[i].iter().map(|&d| d as f64));
        values.extend(self.order_hist[i].iter().map(|&o| o as f64));
        Ok(Observation { values })
    }

    pub fn observe_all(&self, net: &SupplyNetwork) -> Vec<Observation> {
        (0..net.len())
            .map(|i| self.observe(net, i).expect("index in range"))
            .collect()
    }

    fn lead_time(&mut self, lambda_l: f64) -> usize {
        let draw = sample_poisson(&mut self.rng, lambda_l).expect("validated rate");
        draw.max(1) as usize
    }

    pub fn step(&mut self, net: &SupplyNetwork, joint_orders: &[i64]) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone(self.t));
        }
        let n = net.len();
        if joint_orders.len() != n {
            return Err(EnvError::OrderCount {
                expected: n,
                got: joint_orders.len(),
            });
        }
        let t = self.t;
        let orders: Vec<i64> = joint_orders
            .iter()
            .zip(&net.nodes)
            .map(|(&o, p)| o.clamp(0, p.max_order))
            .collect();

        // arrivals
        let mut arrivals = vec![0i64; n];
        self.pipeline.retain(|s| {
            if s.arrive_at == t {
                arrivals[s.dest] += s.qty;
                false
            } else {
                true
            }
        });

        // demand per outgoing slot
        let mut demand: Vec<Vec<i64>> = Vec::with_capacity(n);
        for (i, node) in net.nodes.iter().enumerate() {
            if node.downstream.is_empty() {
                let c = match net.demand_model {
                    DemandModel::Poisson => {
                        sample_poisson(&mut self.rng, net.lambda_d).expect("validated rate") as i64
                    }
                    DemandModel::Constant => net.lambda_d.round() as i64,
                };
                demand.push(vec![c]);
            } else {
                demand.push(node.downstream.iter().map(|&d| orders[d]).collect());
            }
            debug_assert_eq!(demand[i].len(), self.backlog[i].len());
        }

        // shipping and ledger
        let mut shipped: Vec<Vec<i64>> = Vec::with_capacity(n);
        for i in 0..n {
            let requests: Vec<i64> = self.backlog[i]
                .iter()
                .zip(&demand[i])
                .map(|(b, d)| b + d)
                .collect();
            let available = self.inventory[i] + arrivals[i];
            let g = allocate(available, &requests, &net.nodes[i].downstream);
            for k in 0..g.len() {
                self.backlog[i][k] = requests[k] - g[k];
            }
            self.inventory[i] = available - g.iter().sum::<i64>();
            shipped.push(g);
        }
        for (i, node) in net.nodes.iter().enumerate() {
            for (k, &d) in node.downstream.iter().enumerate() {
                let qty = shipped[i][k];
                if qty > 0 {
                    let tau = self.lead_time(net.lambda_l);
                    self.pipeline.push(Shipment {
                        origin: Some(i),
                        dest: d,
                        qty,
                        arrive_at: t + tau,
                    });
                }
            }
        }
        for i in 0..n {
            if net.is_source(i) && orders[i] > 0 {
                let tau = self.lead_time(net.lambda_l);
                self.pipeline.push(Shipment {
                    origin: None,
                    dest: i,
                    qty: orders[i],
                    arrive_at: t + tau,
                });
            }
        }

        // capacity, reward, history
        let mut info = Vec::with_capacity(n);
        for (i, node) in net.nodes.iter().enumerate() {
            let lost = (self.inventory[i] - node.max_inventory).max(0);
            self.inventory[i] -= lost;
            let g: i64 = shipped[i].iter().sum();
            let b = self.total_backlog(i);
            let v = self.inventory[i];
            let d: i64 = demand[i].iter().sum();
            info.push(NodeLedger {
                demand: d,
                arrivals: arrivals[i],
                shipped: g,
                order: orders[i],
                inventory: v,
                backlog: b,
                lost,
                revenue: node.price * g as f64,
                order_cost: node.order_cost * orders[i] as f64,
                holding_cost: node.stock_cost * v as f64,
                backlog_cost: node.backlog_cost * b as f64,
            });
            let m = self.demand_hist[i].len();
            if m > 0 {
                self.demand_hist[i].push_front(d);
                self.demand_hist[i].truncate(m);
                self.order_hist[i].push_front(orders[i]);
                self.order_hist[i].truncate(m);
            }
        }
        self.t += 1;
        self.done = self.t >= net.horizon;
        Ok(StepResult {
            observations: self.observe_all(net),
            team_reward: ledger_reward(&info),
            done: self.done,
            info,
        })
    }
}

/// Splits `available` units across `requests`. Shortfalls are shared in
/// proportion to each request, floored, with leftover units handed out by
/// largest remainder and ties going to the lower downstream node index.
pub fn allocate(available: i64, requests: &[i64], downstream: &[usize]) -> Vec<i64> {
    let total: i64 = requests.iter().sum();
    let available = available.max(0);
    if total <= available {
        return requests.to_vec();
    }
    let mut shares = Vec::with_capacity(requests.len());
    let mut remainders = Vec::with_capacity(requests.len());
    for &r in requests {
        let scaled = available as i128 * r as i128;
        shares.push((scaled / total as i128) as i64);
        remainders.push(scaled % total as i128);
    }
    let mut left = available - shares.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..requests.len()).collect();
    let key = |k: usize| downstream.get(k).copied().unwrap_or(k);
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(key(a).cmp(&key(b))));
    for k in order {
        if left == 0 {
            break;
        }
        shares[k] += 1;
        left -= 1;
    }
    shares
}

/// One CSV row per node per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub node: usize,
    pub inventory: i64,
    pub backlog: i64,
    pub arrivals: i64,
    pub shipped: i64,
    pub order: i64,
    pub demand: i64,
    pub lost: i64,
    pub revenue: f64,
    pub order_cost: f64,
    pub holding_cost: f64,
    pub backlog_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
}

impl EpisodeTrace {
    pub fn record(&mut self, t: usize, info: &[NodeLedger]) {
        for (node, l) in info.iter().enumerate() {
            self.rows.push(TraceRow {
                t,
                node,
                inventory: l.inventory,
                backlog: l.backlog,
                arrivals: l.arrivals,
                shipped: l.shipped,
                order: l.order,
                demand: l.demand,
                lost: l.lost,
                revenue: l.revenue,
                order_cost: l.order_cost,
                holding_cost: l.holding_cost,
                backlog_cost: l.backlog_cost,
            });
        }
    }

    pub fn profit(&self) -> f64 {
        let mut total = 0.0;
        let mut t = usize::MAX;
        let mut step = 0.0;
        for r in &self.rows {
            if r.t != t {
                total += step;
                step = 0.0;
                t = r.t;
            }
            step += r.revenue - r.order_cost - r.holding_cost - r.backlog_cost;
        }
        total + step
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
        Ok(Self { rows })
    }
}
