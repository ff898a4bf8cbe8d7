//! Static (s, S) benchmark: one constant reorder pair per node, tuned by
//! multi-start coordinate search on simulated profit.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Observation;
use crate::eval::{run_episode, JointPolicy};
use crate::marl::derive_seed;
use crate::policy::order_from_ss;
use crate::supply_net::SupplyNetwork;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("policy has {got} nodes, network has {expected}")]
    NodeCount { expected: usize, got: usize },
    #[error("node {node}: need 0 <= s <= S <= {max}, got s={s}, S={big_s}")]
    Infeasible { node: usize, s: i64, big_s: i64, max: i64 },
    #[error("policy file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StaticPolicy {
    /// `(s_i, S_i)` per node, in units.
    pub levels: Vec<(i64, i64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyRow {
    node: usize,
    s: i64,
    #[serde(rename = "S")]
    big_s: i64,
}

impl StaticPolicy {
    pub fn uniform(n: usize, s: i64, big_s: i64) -> Self {
        Self {
            levels: vec![(s, big_s); n],
        }
    }

    pub fn validate(&self, net: &SupplyNetwork) -> Result<(), BaselineError> {
        if self.levels.len() != net.len() {
            return Err(BaselineError::NodeCount {
                expected: net.len(),
                got: self.levels.len(),
            });
        }
        for (node, (&(s, big_s), params)) in self.levels.iter().zip(&net.nodes).enumerate() {
            if s < 0 || s > big_s || big_s > params.max_inventory {
                return Err(BaselineError::Infeasible {
                    node,
                    s,
                    big_s,
                    max: params.max_inventory,
                });
            }
        }
        Ok(())
    }

    /// CSV with header `node,s,S`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BaselineError> {
        let mut w = csv::Writer::from_writer(writer);
        for (node, &(s, big_s)) in self.levels.iter().enumerate() {
            w.serialize(PolicyRow { node, s, big_s })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, BaselineError> {
        let mut rows: Vec<PolicyRow> = csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<Result<_, _>>()?;
        rows.sort_by_key(|r| r.node);
        Ok(Self {
            levels: rows.into_iter().map(|r| (r.s, r.big_s)).collect(),
        })
    }
}

impl JointPolicy for StaticPolicy {
    fn orders(&self, net: &SupplyNetwork, obs: &[Observation]) -> Vec<i64> {
        self.levels
            .iter()
            .zip(obs)
            .zip(&net.nodes)
            .map(|((&(s, big_s), o), node)| order_from_ss(s as f64, big_s as f64, o.inventory(), node.max_order))
            .collect()
    }
}

/// Mean cumulative profit over episodes seeded `seed, seed + 1, ...`.
/// The fixed seed set gives common random numbers across candidates.
pub fn simulate_static(
    policy: &StaticPolicy,
    net: &SupplyNetwork,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<f64, BaselineError> {
    policy.validate(net)?;
    let mut run_net;
    let net = if horizon != net.horizon {
        run_net = net.clone();
        run_net.horizon = horizon;
        &run_net
    } else {
        net
    };
    let total: f64 = (0..episodes as u64)
        .map(|k| run_episode(net, policy, seed + k, None).profit)
        .sum();
    Ok(total / episodes.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub n_starts: usize,
    /// Total objective evaluations, split evenly across starts.
    pub budget: usize,
    pub seed: u64,
    /// Episodes per objective evaluation.
    pub episodes: usize,
    /// First episode seed of the common-random-number set.
    pub eval_seed: u64,
}

/// Tuning uses its own episode seeds, disjoint from the default evaluation set.
pub const DEFAULT_TUNING_SEED_BASE: u64 = 5_000_000;

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            n_starts: 20,
            budget: 5000,
            seed: 0,
            episodes: 20,
            eval_seed: DEFAULT_TUNING_SEED_BASE,
        }
    }
}

pub const STEP_SIZES: [i64; 5] = [16, 8, 4, 2, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub start: StaticPolicy,
    pub best: StaticPolicy,
    pub profit: f64,
    /// Objective after the initial evaluation and after every accepted move.
    pub accepted: Vec<f64>,
    pub evaluations: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub policy: StaticPolicy,
    pub profit: f64,
    pub evaluations: usize,
    /// True if any start ran out of budget before converging.
    pub truncated: bool,
    pub starts: Vec<StartRecord>,
}

fn random_feasible<R: Rng>(net: &SupplyNetwork, rng: &mut R) -> StaticPolicy {
    StaticPolicy {
        levels: net
            .nodes
            .iter()
            .map(|n| {
                let s = rng.gen_range(0..=n.max_inventory);
                let big_s = rng.gen_range(s..=n.max_inventory);
                (s, big_s)
            })
            .collect(),
    }
}

fn search_from(net: &SupplyNetwork, start: StaticPolicy, budget: usize, opts: &SearchOptions) -> StartRecord {
    let objective = |p: &StaticPolicy| {
        simulate_static(p, net, opts.episodes, net.horizon, opts.eval_seed).expect("search keeps policies feasible")
    };
    let mut record = StartRecord {
        start: start.clone(),
        best: start.clone(),
        profit: f64::NEG_INFINITY,
        accepted: Vec::new(),
        evaluations: 0,
        truncated: false,
    };
    if budget == 0 {
        record.truncated = true;
        return record;
    }
    let mut current = start;
    let mut best = objective(&current);
    record.evaluations = 1;
    record.accepted.push(best);
    'steps: for &step in &STEP_SIZES {
        loop {
            let mut improved = false;
            for node in 0..current.levels.len() {
                let max = net.nodes[node].max_inventory;
                for coord in 0..2 {
                    for dir in [1i64, -1] {
                        let mut cand = current.clone();
                        let (s, big_s) = &mut cand.levels[node];
                        if coord == 0 {
                            *s += dir * step;
                        } else {
                            *big_s += dir * step;
                        }
                        let (s, big_s) = cand.levels[node];
                        if s < 0 || s > big_s || big_s > max {
                            continue;
                        }
                        if record.evaluations >= budget {
                            record.truncated = true;
                            break 'steps;
                        }
                        let value = objective(&cand);
                        record.evaluations += 1;
                        if value > best {
                            best = value;
                            current = cand;
                            record.accepted.push(best);
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    record.best = current;
    record.profit = best;
    record
}

/// Multi-start coordinate search with step sizes 16, 8, 4, 2, 1. Each start
/// draws a random feasible policy and accepts only strict improvements.
pub fn optimize_static(net: &SupplyNetwork, opts: &SearchOptions) -> SearchResult {
    let n_starts = opts.n_starts.max(1);
    let per_start = opts.budget / n_starts;
    let starts: Vec<StartRecord> = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, &[k as u64]));
            let start = random_feasible(net, &mut rng);
            search_from(net, start, per_start, opts)
        })
        .collect();
    let best = starts
        .iter()
        .filter(|r| r.evaluations > 0)
        .fold(None::<&StartRecord>, |acc, r| match acc {
            None => Some(r),
            Some(b) if r.profit > b.profit || (r.profit == b.profit && r.best < b.best) => Some(r),
            keep => keep,
        });
    let (policy, profit) = match best {
        Some(b) => (b.best.clone(), b.profit),
        None => (starts[0].start.clone(), f64::NEG_INFINITY),
    };
    SearchResult {
        policy,
        profit,
        evaluations: starts.iter().map(|r| r.evaluations).sum(),
        truncated: starts.iter().any(|r| r.truncated),
        starts,
    }
}
