//! The semantic knowledge base: seen and unseen global graphs with their
//! initial node features, plus the versioned JSON artifact that stores them.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::{KnowledgeGraph, TripleRecord};
use super::prune::prune;
use super::subgraph::{two_hop_subgraph, union_graphs, GlobalGraph, GraphRole};
use super::vectors::{init_node_features, CoverageReport, WordVectorTable};
use super::walk::{compute_edge_weights, random_walk_counts, CountMatrix, CountMode, Smoothing, WalkConfig};
use crate::error::{Error, Result};
use crate::gcn::NodeFeatureMatrix;

pub const SKB_FORMAT: &str = "semcom-skb";
pub const SKB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkbSettings {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub count_mode: CountMode,
    pub smoothing: Smoothing,
    pub prune_k: usize,
    pub seed: u64,
}

impl Default for SkbSettings {
    fn default() -> Self {
        let w = WalkConfig::default();
        Self {
            walks_per_node: w.walks_per_node,
            walk_length: w.walk_length,
            count_mode: w.count_mode,
            smoothing: Smoothing::Universe,
            prune_k: 8,
            seed: 0,
        }
    }
}

impl SkbSettings {
    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig {
            walks_per_node: self.walks_per_node,
            walk_length: self.walk_length,
            count_mode: self.count_mode,
            seed: self.seed,
        }
    }
}

/// One split's graph together with its layer-0 features.
#[derive(Debug, Clone, PartialEq)]
pub struct SkbPart {
    pub graph: GlobalGraph,
    pub features: NodeFeatureMatrix,
    pub coverage: CoverageReport,
    counts: CountMatrix,
}

impl SkbPart {
    pub fn counts(&self) -> &CountMatrix {
        &self.counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub settings: SkbSettings,
    pub seen: SkbPart,
    pub unseen: Option<SkbPart>,
}

fn build_part(
    kg: &KnowledgeGraph,
    wv: &WordVectorTable,
    categories: &[String],
    role: GraphRole,
    settings: &SkbSettings,
) -> Result<SkbPart> {
    let subs = categories
        .iter()
        .map(|y| two_hop_subgraph(kg, y))
        .collect::<Result<Vec<_>>>()?;
    let mut graph = union_graphs(&subs, role)?;
    let counts = random_walk_counts(&graph.graph, &settings.walk_config())?;
    let weights = compute_edge_weights(&counts, &graph.graph, settings.smoothing)?;
    graph = prune(&graph, &weights, settings.prune_k)?;
    graph.weights = Some(weights);
    let (features, coverage) = init_node_features(&graph, wv);
    Ok(SkbPart {
        graph,
        features,
        coverage,
        counts,
    })
}

/// Builds the seen graph and, when `unseen` is non-empty, the unseen graph.
pub fn build_knowledge_base(
    kg: &KnowledgeGraph,
    wv: &WordVectorTable,
    seen: &[String],
    unseen: &[String],
    settings: SkbSettings,
) -> Result<KnowledgeBase> {
    let seen_set: BTreeSet<&String> = seen.iter().collect();
    if let Some(dup) = unseen.iter().find(|u| seen_set.contains(u)) {
        return Err(Error::CategoryOverlap(dup.clone()));
    }
    if seen.is_empty() {
        return Err(Error::invalid("no seen categories"));
    }
    let seen_part = build_part(kg, wv, seen, GraphRole::Seen, &settings)?;
    let unseen_part = if unseen.is_empty() {
        None
    } else {
        Some(build_part(kg, wv, unseen, GraphRole::Unseen, &settings)?)
    };
    Ok(KnowledgeBase {
        settings,
        seen: seen_part,
        unseen: unseen_part,
    })
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    label: String,
    category: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    role: GraphRole,
    nodes: Vec<NodeRecord>,
    edges: Vec<[usize; 2]>,
    /// `[u, v, s_uv, s_vu]` for every retained edge; informational, the
    /// loader recomputes weights from `walk_counts`.
    edge_weights: Vec<(usize, usize, f64, f64)>,
    triples: Vec<[String; 3]>,
    walk_counts: Vec<[u64; 3]>,
    feature_dim: usize,
    features: Vec<Vec<f64>>,
    missing_vectors: Vec<String>,
    partial_vectors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SkbRecord {
    format: String,
    version: u32,
    settings: SkbSettings,
    graphs: Vec<GraphRecord>,
}

impl GraphRecord {
    fn from_part(p: &SkbPart) -> Self {
        let g = &p.graph;
        let kg = &g.graph;
        let weights = g.weights.as_ref();
        let edges = kg.edges();
        GraphRecord {
            role: g.role,
            nodes: (0..kg.node_count())
                .map(|id| NodeRecord {
                    id,
                    label: kg.label(id).to_string(),
                    category: g.is_category(id),
                })
                .collect(),
            edge_weights: edges
                .iter()
                .map(|&(u, v)| {
                    let (a, b) = weights.map_or((0.0, 0.0), |w| (w.weight(u, v), w.weight(v, u)));
                    (u, v, a, b)
                })
                .collect(),
            edges: edges.iter().map(|&(u, v)| [u, v]).collect(),
            triples: kg
                .triples()
                .into_iter()
                .map(|t| [t.head, t.relation, t.tail])
                .collect(),
            walk_counts: (0..p.counts.len())
                .flat_map(|u| p.counts.row(u).iter().map(move |(&v, &c)| [u as u64, v as u64, c]))
                .collect(),
            feature_dim: p.features.dim(),
            features: p.features.values.rows().into_iter().map(|r| r.to_vec()).collect(),
            missing_vectors: p.coverage.missing.clone(),
            partial_vectors: p.coverage.partial.clone(),
        }
    }

    fn into_part(self, settings: &SkbSettings) -> Result<SkbPart> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Format(format!("node ids must be dense, found {} at {i}", node.id)));
            }
        }
        let labels: Vec<String> = self.nodes.iter().map(|n| n.label.clone()).collect();
        let triples: Vec<TripleRecord> = self
            .triples
            .into_iter()
            .map(|[h, r, t]| TripleRecord::new(h, r, t))
            .collect();
        let base = KnowledgeGraph::from_parts(labels.clone(), &triples);
        if base.labels() != labels.as_slice() {
            return Err(Error::Format("node labels must be unique and sorted".into()));
        }
        let mut edge_set = BTreeSet::new();
        for [u, v] in &self.edges {
            if *u >= n || *v >= n || u == v {
                return Err(Error::Format(format!("bad edge [{u}, {v}]")));
            }
            edge_set.insert((*u.min(v), *u.max(v)));
        }
        let kg = base.with_edges(&edge_set);

        let mut dense = vec![std::collections::BTreeMap::new(); n];
        for [u, v, c] in &self.walk_counts {
            let (u, v) = (*u as usize, *v as usize);
            if u >= n || v >= n {
                return Err(Error::Format(format!("walk count index [{u}, {v}] out of range")));
            }
            dense[u].insert(v, *c);
        }
        let counts = CountMatrix::from_dense(
            &dense
                .iter()
                .map(|row| {
                    let mut full = vec![0u64; n];
                    for (&v, &c) in row {
                        full[v] = c;
                    }
                    full
                })
                .collect::<Vec<_>>(),
        );
        // weights were computed on the pre-pruning graph, which the
        // provenance triples still describe
        let weights = compute_edge_weights(&counts, &base, settings.smoothing)?;

        if self.features.len() != n {
            return Err(Error::DimMismatch {
                context: "feature rows",
                expected: n,
                actual: self.features.len(),
            });
        }
        let mut values = Array2::zeros((n, self.feature_dim));
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != self.feature_dim {
                return Err(Error::DimMismatch {
                    context: "feature row",
                    expected: self.feature_dim,
                    actual: row.len(),
                });
            }
            values.row_mut(i).assign(&ndarray::ArrayView1::from(row.as_slice()));
        }
        let category_nodes = self
            .nodes
            .iter()
            .filter(|n| n.category)
            .map(|n| n.id)
            .collect();
        Ok(SkbPart {
            graph: GlobalGraph {
                graph: kg,
                category_nodes,
                weights: Some(weights),
                role: self.role,
            },
            features: NodeFeatureMatrix::new(values, 0),
            coverage: CoverageReport {
                exact: n - self.missing_vectors.len() - self.partial_vectors.len(),
                partial: self.partial_vectors,
                missing: self.missing_vectors,
                total: n,
            },
            counts,
        })
    }
}

impl KnowledgeBase {
    /// Pretty-printed JSON; identical inputs give identical bytes.
    pub fn to_json(&self) -> Result<String> {
        let mut graphs = vec![GraphRecord::from_part(&self.seen)];
        if let Some(u) = &self.unseen {
            graphs.push(GraphRecord::from_part(u));
        }
        let rec = SkbRecord {
            format: SKB_FORMAT.to_string(),
            version: SKB_VERSION,
            settings: self.settings,
            graphs,
        };
        let mut s = serde_json::to_string_pretty(&rec)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: SkbRecord = serde_json::from_str(text)?;
        if rec.format != SKB_FORMAT {
            return Err(Error::Format(format!("not a knowledge-base artifact: `{}`", rec.format)));
        }
        if rec.version != SKB_VERSION {
            return Err(Error::Format(format!(
                "unsupported knowledge-base version {} (expected {SKB_VERSION})",
                rec.version
            )));
        }
        let settings = rec.settings;
        let mut seen = None;
        let mut unseen = None;
        for g in rec.graphs {
            let slot = match g.role {
                GraphRole::Seen => &mut seen,
                GraphRole::Unseen => &mut unseen,
            };
            if slot.is_some() {
                return Err(Error::Format(format!("duplicate {} graph", g.role)));
            }
            *slot = Some(g.into_part(&settings)?);
        }
        let seen = seen.ok_or_else(|| Error::Format("artifact has no seen graph".into()))?;
        Ok(Self {
            settings,
            seen,
            unseen,
        })
    }

    pub fn seen_categories(&self) -> Vec<String> {
        self.seen.graph.category_labels()
    }

    pub fn unseen_categories(&self) -> Vec<String> {
        self.unseen
            .as_ref()
            .map(|u| u.graph.category_labels())
            .unwrap_or_default()
    }
}
