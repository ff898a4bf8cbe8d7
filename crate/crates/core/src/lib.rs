//! Multi-echelon inventory simulation with graph-aware multi-agent PPO.

pub mod baseline;
pub mod env;
pub mod eval;
pub mod gcn;
pub mod harness;
pub mod marl;
pub mod nn;
pub mod plot;
pub mod policy;
pub mod supply_net;
