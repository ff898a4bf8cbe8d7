//! Policy-agnostic episode runner and evaluation statistics.

use serde::{Deserialize, Serialize};

use crate::env::{EnvState, EpisodeTrace, Observation};
use crate::supply_net::SupplyNetwork;

/// Anything that maps the joint raw observation to per-node orders.
pub trait JointPolicy {
    fn orders(&self, net: &SupplyNetwork, obs: &[Observation]) -> Vec<i64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub profit: f64,
    /// Mean over steps of the system-wide backlog (sum over nodes), units.
    pub mean_backlog: f64,
    /// Mean over steps of the system-wide on-hand inventory, units.
    pub mean_inventory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    pub profit_mean: f64,
    pub profit_std: f64,
    pub backlog_median: f64,
    pub backlog_std: f64,
    pub inventory_median: f64,
    pub inventory_std: f64,
}

pub fn run_episode<P: JointPolicy + ?Sized>(
    net: &SupplyNetwork,
    policy: &P,
    seed: u64,
    trace: Option<&mut EpisodeTrace>,
) -> EpisodeSummary {
    let (mut state, mut obs) = EnvState::reset(net, seed);
    let mut profit = 0.0;
    let mut backlog = 0.0;
    let mut inventory = 0.0;
    let mut steps = 0usize;
    let mut trace = trace;
    while !state.is_done() {
        let orders = policy.orders(net, &obs);
        let result = state.step(net, &orders).expect("episode not finished");
        profit += result.team_reward;
        backlog += result.info.iter().map(|l| l.backlog).sum::<i64>() as f64;
        inventory += result.info.iter().map(|l| l.inventory).sum::<i64>() as f64;
        if let Some(tr) = trace.as_deref_mut() {
            tr.record(steps, &result.info);
        }
        steps += 1;
        obs = result.observations;
    }
    let denom = steps.max(1) as f64;
    EpisodeSummary {
        seed,
        profit,
        mean_backlog: backlog / denom,
        mean_inventory: inventory / denom,
    }
}

/// Recovers an episode summary from a trace written by [`run_episode`].
pub fn summary_from_trace(trace: &EpisodeTrace, seed: u64) -> EpisodeSummary {
    let steps = trace.rows.iter().map(|r| r.t + 1).max().unwrap_or(0);
    let denom = steps.max(1) as f64;
    EpisodeSummary {
        seed,
        profit: trace.profit(),
        mean_backlog: trace.rows.iter().map(|r| r.backlog).sum::<i64>() as f64 / denom,
        mean_inventory: trace.rows.iter().map(|r| r.inventory).sum::<i64>() as f64 / denom,
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn summarize(episodes: &[EpisodeSummary]) -> EvalStats {
    let profits: Vec<f64> = episodes.iter().map(|e| e.profit).collect();
    let backlogs: Vec<f64> = episodes.iter().map(|e| e.mean_backlog).collect();
    let inventories: Vec<f64> = episodes.iter().map(|e| e.mean_inventory).collect();
    EvalStats {
        episodes: episodes.len(),
        profit_mean: mean(&profits),
        profit_std: std_dev(&profits),
        backlog_median: median(&backlogs),
        backlog_std: std_dev(&backlogs),
        inventory_median: median(&inventories),
        inventory_std: std_dev(&inventories),
    }
}

/// Evaluation seeds used throughout: `base, base + 1, ...`.
pub fn eval_seeds(base: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|k| base + k).collect()
}

pub const DEFAULT_EVAL_SEED_BASE: u64 = 1_000_000;
pub const DEFAULT_EVAL_EPISODES: usize = 20;

pub fn evaluate_policy<P: JointPolicy + ?Sized>(
    net: &SupplyNetwork,
    policy: &P,
    seeds: &[u64],
) -> (EvalStats, Vec<EpisodeSummary>) {
    let episodes: Vec<EpisodeSummary> = seeds
        .iter()
        .map(|&s| run_episode(net, policy, s, None))
        .collect();
    (summarize(&episodes), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(i64);

    impl JointPolicy for Fixed {
        fn orders(&self, net: &SupplyNetwork, _obs: &[Observation]) -> Vec<i64> {
            vec![self.0; net.len()]
        }
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - 1.290_994_448_735_805_6).abs() < 1e-12);
        assert_eq!(std_dev(&[5.0]), 0.0);
    }

    #[test]
    fn trace_summary_matches_live_summary() {
        let net = SupplyNetwork::builtin("net6").unwrap();
        let mut trace = EpisodeTrace::default();
        let live = run_episode(&net, &Fixed(6), 42, Some(&mut trace));
        let replay = summary_from_trace(&trace, 42);
        assert!((live.profit - replay.profit).abs() < 1e-9);
        assert_eq!(live.mean_backlog, replay.mean_backlog);
        assert_eq!(live.mean_inventory, replay.mean_inventory);
    }
}
