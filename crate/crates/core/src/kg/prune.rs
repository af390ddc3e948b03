use std::collections::BTreeSet;

use super::subgraph::GlobalGraph;
use super::walk::EdgeWeightMatrix;
use crate::error::{Error, Result};

/// Keeps, for every node, the edges to its `keep_top_k` heaviest neighbours
/// (ties to the smaller label). An edge survives if either endpoint keeps it,
/// so every non-isolated node retains at least one edge.
pub fn prune(g: &GlobalGraph, w: &EdgeWeightMatrix, keep_top_k: usize) -> Result<GlobalGraph> {
    if keep_top_k == 0 {
        return Err(Error::invalid("keep_top_k must be at least 1"));
    }
    if w.universe() != g.node_count() {
        return Err(Error::DimMismatch {
            context: "edge weights",
            expected: g.node_count(),
            actual: w.universe(),
        });
    }
    let kg = &g.graph;
    let mut keep = BTreeSet::new();
    for u in 0..kg.node_count() {
        let mut ranked: Vec<usize> = kg.neighbors(u).to_vec();
        // ids follow label order, so ascending id is ascending label
        ranked.sort_by(|&a, &b| w.weight(u, b).total_cmp(&w.weight(u, a)).then(a.cmp(&b)));
        for &v in ranked.iter().take(keep_top_k) {
            keep.insert((u.min(v), u.max(v)));
        }
    }
    Ok(GlobalGraph {
        graph: kg.with_edges(&keep),
        category_nodes: g.category_nodes.clone(),
        weights: g.weights.clone(),
        role: g.role,
    })
}
