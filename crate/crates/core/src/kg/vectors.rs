use std::collections::BTreeMap;
use std::io::BufRead;

use ndarray::Array2;

use super::subgraph::GlobalGraph;
use crate::error::{Error, Result};
use crate::gcn::NodeFeatureMatrix;

/// Token → vector lookup loaded from a GloVe-style text file.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch {
                context: "word vector",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Text form accepted by [`load_word_vectors`], tokens in ascending order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (token, v) in &self.vectors {
            out.push_str(token);
            for x in v {
                out.push(' ');
                out.push_str(&format!("{x}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Reads `token v1 ... vD` lines. The first occurrence of a token wins.
pub fn load_word_vectors<R: BufRead>(source: R, dim: usize) -> Result<WordVectorTable> {
    let mut table = WordVectorTable::new(dim);
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let mut parts = line.split_ascii_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("bad component `{p}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                lineno,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        table.vectors.entry(token.to_string()).or_insert(values);
    }
    Ok(table)
}

/// How node labels resolved against the vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub exact: usize,
    /// Multiword labels where only some tokens were found.
    pub partial: Vec<String>,
    /// Labels with no in-vocabulary token; these get the zero vector.
    pub missing: Vec<String>,
    pub total: usize,
}

impl CoverageReport {
    pub fn covered(&self) -> usize {
        self.total - self.missing.len()
    }
}

impl std::fmt::Display for CoverageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{} labels covered ({} partial, {} out of vocabulary)",
            self.covered(),
            self.total,
            self.partial.len(),
            self.missing.len()
        )
    }
}

fn label_vector(label: &str, wv: &WordVectorTable) -> (Vec<f64>, usize, usize) {
    if let Some(v) = wv.get(label) {
        return (v.to_vec(), 1, 1);
    }
    let tokens: Vec<&str> = label
        .split(['_', ' '])
        .filter(|t| !t.is_empty())
        .collect();
    let mut acc = vec![0.0; wv.dim()];
    let mut hits = 0;
    for t in &tokens {
        if let Some(v) = wv.get(t).or_else(|| wv.get(&t.to_lowercase())) {
            acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            hits += 1;
        }
    }
    if hits > 0 {
        acc.iter_mut().for_each(|a| *a /= hits as f64);
    }
    (acc, hits, tokens.len().max(1))
}

/// Layer-0 features: each node's word vector, multiword labels averaged over
/// their in-vocabulary tokens, unknown labels zero.
pub fn init_node_features(
    g: &GlobalGraph,
    wv: &WordVectorTable,
) -> (NodeFeatureMatrix, CoverageReport) {
    let n = g.node_count();
    let mut values = Array2::zeros((n, wv.dim()));
    let mut report = CoverageReport {
        total: n,
        ..Default::default()
    };
    for (id, label) in g.graph.labels().iter().enumerate() {
        let (v, hits, tokens) = label_vector(label, wv);
        match hits {
            0 => report.missing.push(label.clone()),
            h if h < tokens => report.partial.push(label.clone()),
            _ => report.exact += 1,
        }
        values.row_mut(id).assign(&ndarray::ArrayView1::from(&v));
    }
    (NodeFeatureMatrix::new(values, 0), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{two_hop_subgraph, union_graphs, GraphRole, KnowledgeGraph, TripleRecord};

    #[test]
    fn zeros_line() {
        let line = format!("cat{}\n", " 0".repeat(300));
        let t = load_word_vectors(line.as_bytes(), 300).unwrap();
        assert_eq!(t.get("cat").unwrap(), vec![0.0; 300].as_slice());
    }

    #[test]
    fn short_line_rejected_with_line_number() {
        let good = format!("dog{}\n", " 1".repeat(300));
        let bad = format!("cat{}\n", " 0".repeat(299));
        let err = load_word_vectors(format!("{good}{bad}").as_bytes(), 300).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn lookups_return_stored_values() {
        let src = "a 1.5 -2 0.25\nb 0 0 1e-3\nc 7 8 9\n";
        let t = load_word_vectors(src.as_bytes(), 3).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.get("a").unwrap(), &[1.5, -2.0, 0.25]);
        assert_eq!(t.get("b").unwrap(), &[0.0, 0.0, 1e-3]);
        assert_eq!(t.get("c").unwrap(), &[7.0, 8.0, 9.0]);
        assert!(t.get("d").is_none());
        let again = load_word_vectors(t.to_text().as_bytes(), 3).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn non_numeric_component_rejected() {
        assert!(load_word_vectors("a 1 x\n".as_bytes(), 2).is_err());
        assert!(load_word_vectors("a 1 NaN\n".as_bytes(), 2).is_err());
    }

    fn global(labels: &[&str]) -> GlobalGraph {
        let triples: Vec<_> = labels
            .windows(2)
            .map(|w| TripleRecord::new(w[0], "r", w[1]))
            .collect();
        let kg = KnowledgeGraph::from_parts(labels.iter().copied(), &triples);
        let sub = two_hop_subgraph(&kg, labels[0]).unwrap();
        union_graphs(&[sub], GraphRole::Seen).unwrap()
    }

    #[test]
    fn feature_initialization() {
        let wv = load_word_vectors("water 1 2\nbuffalo 3 6\nzebra 5 5\n".as_bytes(), 2).unwrap();
        let g = global(&["zebra", "water_buffalo", "qwerty"]);
        let (x, report) = init_node_features(&g, &wv);
        let row = |l: &str| x.values.row(g.graph.id(l).unwrap()).to_vec();
        assert_eq!(row("zebra"), [5.0, 5.0]);
        assert_eq!(row("water_buffalo"), [2.0, 4.0]);
        assert_eq!(row("qwerty"), [0.0, 0.0]);
        assert_eq!(report.missing, ["qwerty"]);
        assert_eq!(report.exact, 2);
        assert_eq!(report.covered(), 2);
    }

    #[test]
    fn partial_multiword_uses_known_tokens() {
        let wv = load_word_vectors("water 1 2\n".as_bytes(), 2).unwrap();
        let g = global(&["water_xyzzy", "water"]);
        let (x, report) = init_node_features(&g, &wv);
        assert_eq!(x.values.row(g.graph.id("water_xyzzy").unwrap()).to_vec(), [1.0, 2.0]);
        assert_eq!(report.partial, ["water_xyzzy"]);
    }
}
