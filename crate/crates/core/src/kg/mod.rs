//! Knowledge-graph semantic knowledge base: triple and word-vector ingestion,
//! two-hop category subgraphs, random-walk edge weights and pruning.

mod graph;
mod prune;
mod skb;
mod subgraph;
mod vectors;
mod walk;

pub use graph::{load_triples, KnowledgeGraph, TripleRecord};
pub use prune::prune;
pub use skb::{build_knowledge_base, KnowledgeBase, SkbPart, SkbSettings, SKB_FORMAT, SKB_VERSION};
pub use subgraph::{two_hop_subgraph, union_graphs, CategorySubgraph, GlobalGraph, GraphRole};
pub use vectors::{init_node_features, load_word_vectors, CoverageReport, WordVectorTable};
pub use walk::{
    compute_edge_weights, edge_weights, edge_weights_observed, random_walk_counts, CountMatrix,
    CountMode, EdgeWeightMatrix, Smoothing, WalkConfig,
};
