//! Graph convolution with residual connections and layer normalization,
//! producing one semantic embedding per category node.
//!
//! Each layer computes, per node `v`,
//!
//! ```text
//! z_v = Σ_{u ∈ N(v) ∪ {v}} W d_u / √(deg(v)·deg(u))
//! d'_v = ReLU(LN(z_v + P d_v))
//! ```
//!
//! where `deg` counts the self-loop and `P` is a learned projection when the
//! layer changes width (identity otherwise).

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{GlobalGraph, KnowledgeGraph};
use crate::nn::{
    glorot_uniform, layer_norm_rows, layer_norm_rows_backward, relu_backward, slice1, slice1_mut, slice2,
    slice2_mut, LayerNormCache, Parameters, TensorRef,
};
use crate::rng::Rng;

/// Per-node feature rows at some layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix {
    pub values: Array2<f64>,
    pub layer: usize,
}

impl NodeFeatureMatrix {
    pub fn new(values: Array2<f64>, layer: usize) -> Self {
        Self { values, layer }
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }
}

/// How neighbour contributions are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Symmetric degree normalization.
    #[default]
    Degree,
    /// Random-walk edge weights `s_vu`, renormalized over `N(v) ∪ {v}`.
    EdgeWeighted,
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Degree => "degree",
            Aggregation::EdgeWeighted => "edge-weighted",
        })
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(Aggregation::Degree),
            "edge-weighted" | "edge_weighted" => Ok(Aggregation::EdgeWeighted),
            other => Err(Error::invalid(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// `deg(v) = |N(v)| + 1`.
pub fn degree(g: &GlobalGraph, v: &str) -> Result<usize> {
    let id = g.graph.require_id(v)?;
    Ok(g.graph.neighbors(id).len() + 1)
}

/// Sparse propagation matrix `Â` in row-compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Propagation {
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Self {
        let deg: Vec<f64> = adjacency.iter().map(|ns| ns.len() as f64 + 1.0).collect();
        let rows = adjacency
            .iter()
            .enumerate()
            .map(|(v, ns)| {
                let mut entries: Vec<(usize, f64)> = ns
                    .iter()
                    .chain(std::iter::once(&v))
                    .map(|&u| (u, 1.0 / (deg[v] * deg[u]).sqrt()))
                    .collect();
                entries.sort_by_key(|e| e.0);
                entries
            })
            .collect();
        Self { rows }
    }

    pub fn degree_normalized(g: &KnowledgeGraph) -> Self {
        Self::from_adjacency(g.adjacency())
    }

    pub fn new(g: &GlobalGraph, aggregation: Aggregation) -> Result<Self> {
        match aggregation {
            Aggregation::Degree => Ok(Self::degree_normalized(&g.graph)),
            Aggregation::EdgeWeighted => {
                let w = g
                    .weights
                    .as_ref()
                    .ok_or_else(|| Error::invalid("edge-weighted aggregation needs edge weights"))?;
                let rows = (0..g.node_count())
                    .map(|v| {
                        let mut ids: Vec<usize> = g.graph.neighbors(v).to_vec();
                        ids.push(v);
                        ids.sort_unstable();
                        let total: f64 = ids.iter().map(|&u| w.weight(v, u)).sum();
                        ids.into_iter().map(|u| (u, w.weight(v, u) / total)).collect()
                    })
                    .collect();
                Ok(Self { rows })
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    /// `Â x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (v, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(v);
            for &(u, a) in row {
                o.scaled_add(a, &x.row(u));
            }
        }
        out
    }

    /// `Âᵀ x`.
    pub fn apply_transpose(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (v, row) in self.rows.iter().enumerate() {
            for &(u, a) in row {
                out.row_mut(u).scaled_add(a, &x.row(v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.rows.len();
        let mut d = Array2::zeros((n, n));
        for (v, row) in self.rows.iter().enumerate() {
            for &(u, a) in row {
                d[[v, u]] = a;
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    /// `(D_out, D_in)`.
    pub weight: Array2<f64>,
    /// Residual projection `(D_out, D_in)`; `None` is the identity.
    pub residual: Option<Array2<f64>>,
    pub gamma: Array1<f64>,
    pub eta: Array1<f64>,
    pub eps: f64,
}

impl GcnLayerParams {
    pub fn new(input: usize, output: usize, eps: f64, rng: &mut Rng) -> Self {
        let weight = glorot_uniform(output, input, rng);
        let residual = (input != output).then(|| glorot_uniform(output, input, rng));
        Self {
            weight,
            residual,
            gamma: Array1::ones(output),
            eta: Array1::zeros(output),
            eps,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            residual: self.residual.as_ref().map(|p| Array2::zeros(p.raw_dim())),
            gamma: Array1::zeros(self.gamma.len()),
            eta: Array1::zeros(self.eta.len()),
            eps: self.eps,
        }
    }

    /// `ReLU(LN(Â x Wᵀ + x Pᵀ))` for every node.
    pub fn forward(&self, prop: &Propagation, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(layer_forward(prop, x, self)?.0)
    }

    fn check_input(&self, x: &Array2<f64>, nodes: usize) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimMismatch {
                context: "gcn layer input",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        if x.nrows() != nodes {
            return Err(Error::DimMismatch {
                context: "gcn node count",
                expected: nodes,
                actual: x.nrows(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    aggregated: Array2<f64>,
    pre_activation: Array2<f64>,
    norm: LayerNormCache,
}

fn layer_forward(prop: &Propagation, x: &Array2<f64>, p: &GcnLayerParams) -> Result<(Array2<f64>, LayerCache)> {
    p.check_input(x, prop.node_count())?;
    let aggregated = prop.apply(x);
    let mut k = aggregated.dot(&p.weight.t());
    match &p.residual {
        Some(proj) => k += &x.dot(&proj.t()),
        None => k += x,
    }
    let (pre_activation, norm) = layer_norm_rows(&k, &p.gamma, &p.eta, p.eps);
    let out = pre_activation.mapv(|v| v.max(0.0));
    Ok((
        out,
        LayerCache {
            input: x.clone(),
            aggregated,
            pre_activation,
            norm,
        },
    ))
}

fn layer_backward(
    prop: &Propagation,
    p: &GcnLayerParams,
    cache: &LayerCache,
    d_out: &Array2<f64>,
    grad: &mut GcnLayerParams,
) -> Array2<f64> {
    let d_pre = relu_backward(&cache.pre_activation, &d_out.view());
    let (dk, dgamma, deta) = layer_norm_rows_backward(&d_pre, &cache.norm, &p.gamma);
    grad.gamma += &dgamma;
    grad.eta += &deta;
    grad.weight += &dk.t().dot(&cache.aggregated);
    let d_agg = dk.dot(&p.weight);
    let mut dx = prop.apply_transpose(&d_agg);
    match (&p.residual, grad.residual.as_mut()) {
        (Some(proj), Some(gp)) => {
            *gp += &dk.t().dot(&cache.input);
            dx += &dk.dot(proj);
        }
        _ => dx += &dk,
    }
    dx
}

/// Applies one layer to every node of `g`.
pub fn gcn_layer_forward(g: &GlobalGraph, features: &NodeFeatureMatrix, p: &GcnLayerParams) -> Result<NodeFeatureMatrix> {
    let prop = Propagation::degree_normalized(&g.graph);
    let (out, _) = layer_forward(&prop, &features.values, p)?;
    Ok(NodeFeatureMatrix::new(out, features.layer + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub layers: Vec<GcnLayerParams>,
}

/// Intermediates of a forward pass, consumed by [`GcnModel::backward`].
#[derive(Debug, Clone)]
pub struct GcnCache {
    layers: Vec<LayerCache>,
}

impl GcnModel {
    /// Layer widths `dims[0] → dims[1] → …`, weights drawn from `rng`.
    pub fn new(dims: &[usize], eps: f64, rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid("a GCN needs at least one layer"));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer-norm epsilon must be positive"));
        }
        let layers = dims
            .windows(2)
            .map(|w| GcnLayerParams::new(w[0], w[1], eps, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].input_dim()];
        d.extend(self.layers.iter().map(GcnLayerParams::output_dim));
        d
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, GcnLayerParams::output_dim)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(GcnLayerParams::zeros_like).collect(),
        }
    }

    pub fn forward(&self, prop: &Propagation, x0: &Array2<f64>) -> Result<Array2<f64>> {
        let mut h = x0.clone();
        for p in &self.layers {
            h = layer_forward(prop, &h, p)?.0;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, prop: &Propagation, x0: &Array2<f64>) -> Result<(Array2<f64>, GcnCache)> {
        let mut h = x0.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for p in &self.layers {
            let (out, c) = layer_forward(prop, &h, p)?;
            caches.push(c);
            h = out;
        }
        Ok((h, GcnCache { layers: caches }))
    }

    /// Gradients of `Σ d_out ⊙ forward(x0)` with respect to every parameter
    /// and to `x0`.
    pub fn backward(&self, prop: &Propagation, cache: &GcnCache, d_out: &Array2<f64>) -> (GcnModel, Array2<f64>) {
        let mut grad = self.zeros_like();
        let mut d = d_out.clone();
        for ((p, c), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            d = layer_backward(prop, p, c, &d, g);
        }
        (grad, d)
    }
}

impl Parameters for GcnModel {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(TensorRef {
                name: format!("gcn.{i}.weight"),
                shape: l.weight.shape().to_vec(),
                data: slice2(&l.weight),
            });
            if let Some(p) = &l.residual {
                out.push(TensorRef {
                    name: format!("gcn.{i}.residual"),
                    shape: p.shape().to_vec(),
                    data: slice2(p),
                });
            }
            out.push(TensorRef {
                name: format!("gcn.{i}.gamma"),
                shape: vec![l.gamma.len()],
                data: slice1(&l.gamma),
            });
            out.push(TensorRef {
                name: format!("gcn.{i}.eta"),
                shape: vec![l.eta.len()],
                data: slice1(&l.eta),
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(slice2_mut(&mut l.weight));
            if let Some(p) = l.residual.as_mut() {
                out.push(slice2_mut(p));
            }
            out.push(slice1_mut(&mut l.gamma));
            out.push(slice1_mut(&mut l.eta));
        }
        out
    }
}

/// Runs every layer of `m` over `g`.
pub fn gcn_forward(m: &GcnModel, g: &GlobalGraph, x0: &NodeFeatureMatrix) -> Result<NodeFeatureMatrix> {
    let prop = Propagation::degree_normalized(&g.graph);
    Ok(NodeFeatureMatrix::new(m.forward(&prop, &x0.values)?, x0.layer + m.layers.len()))
}

/// Category label → embedding, sorted by label.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryEmbeddingTable {
    labels: Vec<String>,
    seen: Vec<bool>,
    vectors: Array2<f64>,
}

impl CategoryEmbeddingTable {
    pub fn new(entries: Vec<(String, bool, Vec<f64>)>) -> Result<Self> {
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::CategoryOverlap(w[0].0.clone()));
            }
        }
        let dim = entries.first().map_or(0, |e| e.2.len());
        let mut vectors = Array2::zeros((entries.len(), dim));
        for (i, e) in entries.iter().enumerate() {
            if e.2.len() != dim {
                return Err(Error::DimMismatch {
                    context: "category embedding",
                    expected: dim,
                    actual: e.2.len(),
                });
            }
            vectors.row_mut(i).assign(&ArrayView1::from(e.2.as_slice()));
        }
        Ok(Self {
            labels: entries.iter().map(|e| e.0.clone()).collect(),
            seen: entries.iter().map(|e| e.1).collect(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn is_seen(&self, i: usize) -> bool {
        self.seen[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn get(&self, label: &str) -> Option<ArrayView1<'_, f64>> {
        self.index_of(label).map(|i| self.vectors.row(i))
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, bool, ArrayView1<'_, f64>)> {
        self.labels
            .iter()
            .zip(&self.seen)
            .zip(self.vectors.rows())
            .map(|((l, s), v)| (l.as_str(), *s, v))
    }

    /// Union of two tables with disjoint label sets.
    pub fn merge(&self, other: &CategoryEmbeddingTable) -> Result<Self> {
        let entries = self
            .entries()
            .chain(other.entries())
            .map(|(l, s, v)| (l.to_string(), s, v.to_vec()))
            .collect();
        Self::new(entries)
    }

    /// Copy with the rows of the given labels replaced.
    pub fn with_replaced(&self, replacements: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut out = self.clone();
        for (label, v) in replacements {
            let i = self.index_of(label).ok_or_else(|| Error::NotFound {
                kind: "category",
                name: label.clone(),
            })?;
            if v.len() != self.dim() {
                return Err(Error::DimMismatch {
                    context: "replacement embedding",
                    expected: self.dim(),
                    actual: v.len(),
                });
            }
            out.vectors.row_mut(i).assign(&ArrayView1::from(v.as_slice()));
        }
        Ok(out)
    }
}

fn table_from_output(g: &GlobalGraph, out: &Array2<f64>, seen: bool) -> Result<CategoryEmbeddingTable> {
    if g.category_nodes.is_empty() {
        return Err(Error::invalid("graph has no category nodes"));
    }
    CategoryEmbeddingTable::new(
        g.category_nodes
            .iter()
            .map(|&id| (g.graph.label(id).to_string(), seen, out.row(id).to_vec()))
            .collect(),
    )
}

/// φ(y) for every category node of `g`, read from the last layer.
pub fn category_embeddings(m: &GcnModel, g: &GlobalGraph, x0: &NodeFeatureMatrix) -> Result<CategoryEmbeddingTable> {
    let out = gcn_forward(m, g, x0)?;
    table_from_output(g, &out.values, g.role == crate::kg::GraphRole::Seen)
}

/// Embeddings of the unseen graph's categories under a frozen model.
/// Fails if any of them is also a seen category.
pub fn unseen_embeddings(
    m: &GcnModel,
    g_u: &GlobalGraph,
    x0_u: &NodeFeatureMatrix,
    seen: &CategoryEmbeddingTable,
) -> Result<CategoryEmbeddingTable> {
    let labels: BTreeSet<&str> = seen.labels().iter().map(String::as_str).collect();
    for id in &g_u.category_nodes {
        let l = g_u.graph.label(*id);
        if labels.contains(l) {
            return Err(Error::CategoryOverlap(l.to_string()));
        }
    }
    let out = gcn_forward(m, g_u, x0_u)?;
    table_from_output(g_u, &out.values, false)
}

/// Category embeddings of `g` under the given aggregation, flagged seen or
/// unseen by the graph's role.
pub fn embeddings_with(
    m: &GcnModel,
    g: &GlobalGraph,
    x0: &NodeFeatureMatrix,
    aggregation: Aggregation,
) -> Result<CategoryEmbeddingTable> {
    let prop = Propagation::new(g, aggregation)?;
    let out = m.forward(&prop, &x0.values)?;
    table_from_output(g, &out, g.role == crate::kg::GraphRole::Seen)
}
