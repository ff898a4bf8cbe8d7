//! Supply-chain topology and per-node economics.
//!
//! A network is loaded from a whitespace-separated table, one row per node,
//! preceded by a `key = value` header block:
//!
//! ```text
//! lambda_d = 5          # expected customer demand per step (retail nodes)
//! lambda_l = 2          # expected lead time in steps
//! horizon = 50          # episode length
//! history = 3           # demand/order history window M
//! demand_model = poisson  # or `constant` (demand is exactly round(lambda_d))
//!
//! node cost price max_inventory max_order initial_inventory target_inventory stock_cost backlog_cost downstream
//! 0    0.5  4.0   100           100       100               10               0.5        2.5          1,2
//! 3    1.5  8.0   100           100       100               10               0.5        2.5          none
//! ```
//!
//! Nodes with an empty downstream list (`none`) face customer demand. Nodes
//! with no upstream order from an unlimited external source.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NET6: &str = include_str!("../networks/net6.txt");
pub const NET12: &str = include_str!("../networks/net12.txt");
pub const NET18: &str = include_str!("../networks/net18.txt");
pub const NET24: &str = include_str!("../networks/net24.txt");

/// Names accepted by [`SupplyNetwork::builtin`].
pub const BUILTIN_NAMES: [&str; 4] = ["net6", "net12", "net18", "net24"];

const COLUMNS: [&str; 10] = [
    "node",
    "cost",
    "price",
    "max_inventory",
    "max_order",
    "initial_inventory",
    "target_inventory",
    "stock_cost",
    "backlog_cost",
    "downstream",
];

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing column `{0}` in node table header")]
    MissingColumn(String),
    #[error("node table is empty")]
    Empty,
    #[error("node {node} lists downstream node {target}, which does not exist")]
    DanglingDownstream { node: usize, target: usize },
    #[error("node {0} lists itself as downstream")]
    SelfLoop(usize),
    #[error("downstream edges form a cycle through node {0}")]
    Cycle(usize),
    #[error("node {node}: {field} is negative ({value})")]
    NegativeCost {
        node: usize,
        field: &'static str,
        value: f64,
    },
    #[error("node {node}: initial inventory {initial} outside [0, {max}]")]
    InitialInventory { node: usize, initial: i64, max: i64 },
    #[error("node {node}: {field} must be non-negative")]
    NegativeCapacity { node: usize, field: &'static str },
    #[error("row {row} has node index {found}; nodes must be listed in order 0..N")]
    NodeOrder { row: usize, found: usize },
    #[error("rate `{0}` must be finite and non-negative")]
    BadRate(&'static str),
    #[error("unknown built-in network `{0}`")]
    UnknownBuiltin(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// How retail nodes draw customer demand each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DemandModel {
    #[default]
    Poisson,
    /// Demand is exactly `round(lambda_d)` every step. Used for deterministic toys.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub id: usize,
    pub order_cost: f64,
    pub price: f64,
    pub max_inventory: i64,
    pub max_order: i64,
    pub initial_inventory: i64,
    /// Carried through from the network tables; no dynamics read it.
    pub target_inventory: i64,
    pub stock_cost: f64,
    pub backlog_cost: f64,
    pub downstream: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyNetwork {
    pub nodes: Vec<NodeParams>,
    pub lambda_d: f64,
    pub lambda_l: f64,
    pub horizon: usize,
    pub history: usize,
    pub demand_model: DemandModel,
    upstream: Vec<Vec<usize>>,
    retail: Vec<usize>,
}

/// Directed flow edges and the symmetrized structure the GCN consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    pub directed: Array2<f64>,
    pub symmetric: Array2<f64>,
}

impl SupplyNetwork {
    /// Builds and validates a network from node rows and header values.
    pub fn new(
        nodes: Vec<NodeParams>,
        lambda_d: f64,
        lambda_l: f64,
        horizon: usize,
        history: usize,
        demand_model: DemandModel,
    ) -> Result<Self, NetworkError> {
        if nodes.is_empty() {
            return Err(NetworkError::Empty);
        }
        if !(lambda_d.is_finite() && lambda_d >= 0.0) {
            return Err(NetworkError::BadRate("lambda_d"));
        }
        if !(lambda_l.is_finite() && lambda_l >= 0.0) {
            return Err(NetworkError::BadRate("lambda_l"));
        }
        let n = nodes.len();
        for (row, node) in nodes.iter().enumerate() {
            if node.id != row {
                return Err(NetworkError::NodeOrder {
                    row,
                    found: node.id,
                });
            }
            for (field, value) in [
                ("order cost", node.order_cost),
                ("price", node.price),
                ("stock cost", node.stock_cost),
                ("backlog cost", node.backlog_cost),
            ] {
                if !(value >= 0.0) {
                    return Err(NetworkError::NegativeCost {
                        node: row,
                        field,
                        value,
                    });
                }
            }
            if node.max_inventory < 0 {
                return Err(NetworkError::NegativeCapacity {
                    node: row,
                    field: "max inventory",
                });
            }
            if node.max_order < 0 {
                return Err(NetworkError::NegativeCapacity {
                    node: row,
                    field: "max order",
                });
            }
            if node.target_inventory < 0 {
                return Err(NetworkError::NegativeCapacity {
                    node: row,
                    field: "target inventory",
                });
            }
            if node.initial_inventory < 0 || node.initial_inventory > node.max_inventory {
                return Err(NetworkError::InitialInventory {
                    node: row,
                    initial: node.initial_inventory,
                    max: node.max_inventory,
                });
            }
            for &d in &node.downstream {
                if d >= n {
                    return Err(NetworkError::DanglingDownstream {
                        node: row,
                        target: d,
                    });
                }
                if d == row {
                    return Err(NetworkError::SelfLoop(row));
                }
            }
        }
        check_acyclic(&nodes)?;

        let mut upstream = vec![Vec::new(); n];
        for node in &nodes {
            for &d in &node.downstream {
                if !upstream[d].contains(&node.id) {
                    upstream[d].push(node.id);
                }
            }
        }
        let retail = nodes
            .iter()
            .filter(|p| p.downstream.is_empty())
            .map(|p| p.id)
            .collect();
        Ok(Self {
            nodes,
            lambda_d,
            lambda_l,
            horizon,
            history,
            demand_model,
            upstream,
            retail,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes facing customer demand, in index order.
    pub fn retail_set(&self) -> &[usize] {
        &self.retail
    }

    pub fn is_retail(&self, i: usize) -> bool {
        self.nodes[i].downstream.is_empty()
    }

    pub fn upstream(&self, i: usize) -> &[usize] {
        &self.upstream[i]
    }

    /// Nodes without an upstream supplier; they order from the external source.
    pub fn is_source(&self, i: usize) -> bool {
        self.upstream[i].is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.downstream.len()).sum()
    }

    /// Length of each agent's observation vector, `3 + 2M`.
    pub fn obs_dim(&self) -> usize {
        3 + 2 * self.history
    }

    pub fn builtin(name: &str) -> Result<Self, NetworkError> {
        let text = match name {
            "net6" => NET6,
            "net12" => NET12,
            "net18" => NET18,
            "net24" => NET24,
            other => return Err(NetworkError::UnknownBuiltin(other.to_string())),
        };
        load_network(text)
    }

    /// Accepts either a built-in name or a path to a network file.
    pub fn resolve(spec: &str) -> Result<Self, NetworkError> {
        if BUILTIN_NAMES.contains(&spec) {
            return Self::builtin(spec);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| NetworkError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        load_network(&text)
    }

    pub fn with_demand_rate(mut self, lambda_d: f64) -> Result<Self, NetworkError> {
        if !(lambda_d.is_finite() && lambda_d >= 0.0) {
            return Err(NetworkError::BadRate("lambda_d"));
        }
        self.lambda_d = lambda_d;
        Ok(self)
    }

    pub fn with_lead_rate(mut self, lambda_l: f64) -> Result<Self, NetworkError> {
        if !(lambda_l.is_finite() && lambda_l >= 0.0) {
            return Err(NetworkError::BadRate("lambda_l"));
        }
        self.lambda_l = lambda_l;
        Ok(self)
    }

    pub fn with_history(mut self, history: usize) -> Self {
        self.history = history;
        self
    }

    /// Writes the network back out in the same table format `load_network` reads.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lambda_d = {}", self.lambda_d);
        let _ = writeln!(out, "lambda_l = {}", self.lambda_l);
        let _ = writeln!(out, "horizon = {}", self.horizon);
        let _ = writeln!(out, "history = {}", self.history);
        let model = match self.demand_model {
            DemandModel::Poisson => "poisson",
            DemandModel::Constant => "constant",
        };
        let _ = writeln!(out, "demand_model = {model}");
        out.push('\n');
        out.push_str(&COLUMNS.join(" "));
        out.push('\n');
        for n in &self.nodes {
            let down = if n.downstream.is_empty() {
                "none".to_string()
            } else {
                n.downstream
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {} {} {}",
                n.id,
                n.order_cost,
                n.price,
                n.max_inventory,
                n.max_order,
                n.initial_inventory,
                n.target_inventory,
                n.stock_cost,
                n.backlog_cost,
                down
            );
        }
        out
    }
}

fn check_acyclic(nodes: &[NodeParams]) -> Result<(), NetworkError> {
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    for node in nodes {
        for &d in &node.downstream {
            indegree[d] += 1;
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        for &d in &nodes[i].downstream {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    if visited == n {
        Ok(())
    } else {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        Err(NetworkError::Cycle(stuck))
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> NetworkError {
    NetworkError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses and validates a network file. Node order matches file order.
pub fn load_network(config_text: &str) -> Result<SupplyNetwork, NetworkError> {
    let mut lambda_d = 5.0;
    let mut lambda_l = 2.0;
    let mut horizon = 50usize;
    let mut history = 3usize;
    let mut demand_model = DemandModel::Poisson;
    let mut column_index: Option<Vec<usize>> = None;
    let mut nodes = Vec::new();

    for (idx, raw) in config_text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if column_index.is_none() {
            if let Some((key, value)) = line.split_once('=') {
                let key = key.trim();
                let value = value.trim();
                let bad = |what: &str| parse_err(line_no, format!("bad {what} value `{value}`"));
                match key {
                    "lambda_d" => lambda_d = value.parse().map_err(|_| bad("lambda_d"))?,
                    "lambda_l" => lambda_l = value.parse().map_err(|_| bad("lambda_l"))?,
                    "horizon" => horizon = value.parse().map_err(|_| bad("horizon"))?,
                    "history" => history = value.parse().map_err(|_| bad("history"))?,
                    "demand_model" => {
                        demand_model = match value {
                            "poisson" => DemandModel::Poisson,
                            "constant" => DemandModel::Constant,
                            _ => return Err(bad("demand_model")),
                        }
                    }
                    other => return Err(parse_err(line_no, format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let header: Vec<&str> = line.split_whitespace().collect();
            let mut positions = Vec::with_capacity(COLUMNS.len());
            for col in COLUMNS {
                let pos = header
                    .iter()
                    .position(|h| h.eq_ignore_ascii_case(col))
                    .ok_or_else(|| NetworkError::MissingColumn(col.to_string()))?;
                positions.push(pos);
            }
            column_index = Some(positions);
            continue;
        }
        let cols = column_index.as_ref().expect("header parsed");
        let fields: Vec<&str> = line.split_whitespace().collect();
        let get = |c: usize| -> Result<&str, NetworkError> {
            fields
                .get(cols[c])
                .copied()
                .ok_or_else(|| parse_err(line_no, format!("missing value for `{}`", COLUMNS[c])))
        };
        let float = |c: usize| -> Result<f64, NetworkError> {
            let s = get(c)?;
            s.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("`{}`: not a number: `{s}`", COLUMNS[c])))
        };
        let int = |c: usize| -> Result<i64, NetworkError> {
            let s = get(c)?;
            s.parse::<i64>()
                .map_err(|_| parse_err(line_no, format!("`{}`: not an integer: `{s}`", COLUMNS[c])))
        };
        let id_text = get(0)?;
        let id: usize = id_text
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad node index `{id_text}`")))?;
        let down_text = get(9)?;
        let downstream = if down_text.eq_ignore_ascii_case("none") || down_text == "-" {
            Vec::new()
        } else {
            down_text
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| parse_err(line_no, format!("bad downstream index `{s}`")))
                })
                .collect::<Result<Vec<_>, _>>()?
        };
        nodes.push(NodeParams {
            id,
            order_cost: float(1)?,
            price: float(2)?,
            max_inventory: int(3)?,
            max_order: int(4)?,
            initial_inventory: int(5)?,
            target_inventory: int(6)?,
            stock_cost: float(7)?,
            backlog_cost: float(8)?,
            downstream,
        });
    }
    if column_index.is_none() {
        return Err(NetworkError::MissingColumn("node".to_string()));
    }
    SupplyNetwork::new(nodes, lambda_d, lambda_l, horizon, history, demand_model)
}

/// Flow edges (`directed[i][j] = 1` iff `j` is downstream of `i`) and their
/// symmetrization. Diagonals stay zero; the GCN adds self-loops itself.
pub fn adjacency(net: &SupplyNetwork) -> AdjacencyMatrix {
    let n = net.len();
    let mut directed = Array2::<f64>::zeros((n, n));
    for node in &net.nodes {
        for &d in &node.downstream {
            directed[[node.id, d]] = 1.0;
        }
    }
    let mut symmetric = directed.clone();
    for i in 0..n {
        for j in 0..n {
            symmetric[[i, j]] = directed[[i, j]].max(directed[[j, i]]);
        }
    }
    AdjacencyMatrix {
        directed,
        symmetric,
    }
}
