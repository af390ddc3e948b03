use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::KnowledgeGraph;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Which visits of a walk are counted toward `C_uv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// Every node the walk lands on after each step.
    #[default]
    EveryStep,
    /// Only the node where the walk ends.
    Endpoint,
}

/// Which pairs receive the +1 smoothing mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// Every node of the universe, so each row is dense.
    #[default]
    Universe,
    /// Only graph neighbours and nodes a walk actually reached.
    ObservedEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub count_mode: CountMode,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            walks_per_node: 100,
            walk_length: 2,
            count_mode: CountMode::EveryStep,
            seed: 0,
        }
    }
}

/// Sparse visit counts, one row per start node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountMatrix {
    rows: Vec<BTreeMap<usize, u64>>,
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn from_dense(dense: &[Vec<u64>]) -> Self {
        Self {
            rows: dense
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(v, &c)| (v, c))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, u: usize, v: usize) -> u64 {
        self.rows[u].get(&v).copied().unwrap_or(0)
    }

    pub fn row(&self, u: usize) -> &BTreeMap<usize, u64> {
        &self.rows[u]
    }

    pub fn row_total(&self, u: usize) -> u64 {
        self.rows[u].values().sum()
    }

    fn bump(&mut self, u: usize, v: usize) {
        *self.rows[u].entry(v).or_insert(0) += 1;
    }
}

/// Simulates uniform random walks from every node and tallies arrivals.
///
/// Node `u` draws from its own stream seeded with `seed ^ u`, so rows can be
/// computed independently and in any order.
pub fn random_walk_counts(g: &KnowledgeGraph, cfg: &WalkConfig) -> Result<CountMatrix> {
    if cfg.walks_per_node == 0 || cfg.walk_length == 0 {
        return Err(Error::invalid("walks_per_node and walk_length must be at least 1"));
    }
    if g.node_count() == 0 {
        return Err(Error::invalid("random walk on an empty graph"));
    }
    let mut counts = CountMatrix::zeros(g.node_count());
    for start in 0..g.node_count() {
        if g.neighbors(start).is_empty() {
            continue;
        }
        let mut rng = rng_from(cfg.seed ^ start as u64);
        for _ in 0..cfg.walks_per_node {
            let mut at = start;
            for step in 1..=cfg.walk_length {
                let ns = g.neighbors(at);
                at = ns[rng.random_range(0..ns.len())];
                if cfg.count_mode == CountMode::EveryStep || step == cfg.walk_length {
                    counts.bump(start, at);
                }
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
enum Support {
    Universe,
    Listed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
struct WeightRow {
    counts: BTreeMap<usize, u64>,
    support: Support,
    denominator: f64,
}

/// Row-stochastic edge weights `s_uv = (C_uv + 1) / Σ_w (C_uw + 1)`.
///
/// Stored sparsely: only nonzero counts are kept and the weight of every
/// other pair in a row's support is `1 / denominator`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightMatrix {
    universe: usize,
    smoothing: Smoothing,
    rows: Vec<WeightRow>,
}

impl EdgeWeightMatrix {
    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn count(&self, u: usize, v: usize) -> u64 {
        self.rows[u].counts.get(&v).copied().unwrap_or(0)
    }

    /// Nonzero visit counts of row `u`.
    pub fn counts(&self, u: usize) -> &BTreeMap<usize, u64> {
        &self.rows[u].counts
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        let row = &self.rows[u];
        let in_support = match &row.support {
            Support::Universe => true,
            Support::Listed(s) => s.binary_search(&v).is_ok(),
        };
        if in_support {
            (self.count(u, v) as f64 + 1.0) / row.denominator
        } else {
            0.0
        }
    }

    /// Sum of row `u` over the whole universe, evaluated in closed form.
    pub fn row_sum(&self, u: usize) -> f64 {
        let row = &self.rows[u];
        let counted: f64 = row.counts.values().map(|&c| c as f64 + 1.0).sum();
        let untouched = match &row.support {
            Support::Universe => self.universe - row.counts.len(),
            Support::Listed(s) => s.len() - row.counts.len(),
        };
        (counted + untouched as f64) / row.denominator
    }
}

/// Laplace smoothing with the denominator summed over the full universe.
pub fn edge_weights(counts: &CountMatrix, universe: usize) -> Result<EdgeWeightMatrix> {
    if universe == 0 {
        return Err(Error::invalid("edge weights over an empty universe"));
    }
    if counts.len() != universe {
        return Err(Error::DimMismatch {
            context: "count matrix rows",
            expected: universe,
            actual: counts.len(),
        });
    }
    let rows = counts
        .rows
        .iter()
        .map(|r| {
            let total: u64 = r.values().sum();
            WeightRow {
                counts: r.clone(),
                support: Support::Universe,
                denominator: total as f64 + universe as f64,
            }
        })
        .collect();
    Ok(EdgeWeightMatrix {
        universe,
        smoothing: Smoothing::Universe,
        rows,
    })
}

/// Smoothing restricted to each node's neighbours plus any node its walks
/// reached. An isolated node gets all its mass on itself.
pub fn edge_weights_observed(counts: &CountMatrix, g: &KnowledgeGraph) -> Result<EdgeWeightMatrix> {
    let universe = g.node_count();
    if universe == 0 {
        return Err(Error::invalid("edge weights over an empty universe"));
    }
    if counts.len() != universe {
        return Err(Error::DimMismatch {
            context: "count matrix rows",
            expected: universe,
            actual: counts.len(),
        });
    }
    let rows = (0..universe)
        .map(|u| {
            let r = counts.row(u);
            let mut support: Vec<usize> = g.neighbors(u).to_vec();
            support.extend(r.keys());
            if support.is_empty() {
                support.push(u);
            }
            support.sort_unstable();
            support.dedup();
            let total: u64 = r.values().sum();
            WeightRow {
                counts: r.clone(),
                denominator: total as f64 + support.len() as f64,
                support: Support::Listed(support),
            }
        })
        .collect();
    Ok(EdgeWeightMatrix {
        universe,
        smoothing: Smoothing::ObservedEdges,
        rows,
    })
}

pub fn compute_edge_weights(
    counts: &CountMatrix,
    g: &KnowledgeGraph,
    smoothing: Smoothing,
) -> Result<EdgeWeightMatrix> {
    match smoothing {
        Smoothing::Universe => edge_weights(counts, g.node_count()),
        Smoothing::ObservedEdges => edge_weights_observed(counts, g),
    }
}
