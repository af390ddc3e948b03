use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{KnowledgeGraph, TripleRecord};
use super::walk::EdgeWeightMatrix;
use crate::error::{Error, Result};

/// Induced two-hop neighborhood of one category node, held by label so that
/// subgraphs drawn from different graphs can be merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySubgraph {
    pub category: String,
    pub nodes: BTreeSet<String>,
    /// Undirected edges as `(a, b)` with `a < b`.
    pub edges: BTreeSet<(String, String)>,
    pub triples: Vec<TripleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphRole {
    Seen,
    Unseen,
}

impl std::fmt::Display for GraphRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GraphRole::Seen => "seen",
            GraphRole::Unseen => "unseen",
        })
    }
}

/// Union of the category subgraphs of one split (seen or unseen).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGraph {
    pub graph: KnowledgeGraph,
    /// Ids of the category nodes, ascending.
    pub category_nodes: Vec<usize>,
    pub weights: Option<EdgeWeightMatrix>,
    pub role: GraphRole,
}

impl GlobalGraph {
    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Category labels in id order (equivalently, ascending label order).
    pub fn category_labels(&self) -> Vec<String> {
        self.category_nodes
            .iter()
            .map(|&id| self.graph.label(id).to_string())
            .collect()
    }

    pub fn is_category(&self, id: usize) -> bool {
        self.category_nodes.binary_search(&id).is_ok()
    }
}

/// Nodes within two hops of `y` and the subgraph they induce.
pub fn two_hop_subgraph(kg: &KnowledgeGraph, y: &str) -> Result<CategorySubgraph> {
    let root = kg.id(y).ok_or_else(|| Error::NotFound {
        kind: "category",
        name: y.to_string(),
    })?;
    let mut depth = vec![usize::MAX; kg.node_count()];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut keep = BTreeSet::from([root]);
    while let Some(u) = queue.pop_front() {
        if depth[u] == 2 {
            continue;
        }
        for &v in kg.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                keep.insert(v);
                queue.push_back(v);
            }
        }
    }

    let mut edges = BTreeSet::new();
    for &u in &keep {
        for &v in kg.neighbors(u) {
            if v > u && keep.contains(&v) {
                edges.insert((kg.label(u).to_string(), kg.label(v).to_string()));
            }
        }
    }
    Ok(CategorySubgraph {
        category: y.to_string(),
        nodes: keep.iter().map(|&id| kg.label(id).to_string()).collect(),
        edges,
        triples: kg.triples_within(&keep),
    })
}

/// Merges category subgraphs by set union of nodes and edges.
pub fn union_graphs(subs: &[CategorySubgraph], role: GraphRole) -> Result<GlobalGraph> {
    if subs.is_empty() {
        return Err(Error::invalid("union of zero subgraphs"));
    }
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut triples = BTreeSet::new();
    let mut categories = BTreeSet::new();
    for s in subs {
        nodes.extend(s.nodes.iter().cloned());
        edges.extend(s.edges.iter().cloned());
        triples.extend(s.triples.iter().cloned());
        categories.insert(s.category.clone());
    }
    let triples: Vec<TripleRecord> = triples
        .into_iter()
        .filter(|t| nodes.contains(&t.head) && nodes.contains(&t.tail))
        .collect();
    let full = KnowledgeGraph::from_parts(nodes, &triples);
    // Restrict to the union edge set; the triples already agree with it, but
    // a subgraph constructed by hand may carry edges without triples.
    let edge_ids: BTreeSet<(usize, usize)> = edges
        .iter()
        .map(|(a, b)| {
            let (u, v) = (full.require_id(a)?, full.require_id(b)?);
            Ok((u.min(v), u.max(v)))
        })
        .collect::<Result<_>>()?;
    let graph = full.with_edges(&edge_ids);
    let category_nodes = categories
        .iter()
        .map(|c| graph.require_id(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(GlobalGraph {
        graph,
        category_nodes,
        weights: None,
        role,
    })
}
