use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use crate::error::{Error, Result};

/// One `head relation tail` line of a commonsense triple file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl TripleRecord {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
        }
    }
}

/// Undirected graph over string-labelled nodes.
///
/// Node ids are assigned in ascending label order, so two graphs built from
/// the same label set always agree on ids. Adjacency lists are sorted and hold
/// no self-loops. The directed triples the graph was built from are kept for
/// provenance only; aggregation ignores relation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
    triples: BTreeSet<(usize, String, usize)>,
}

impl KnowledgeGraph {
    /// Builds a graph from explicit nodes plus triples. Triple endpoints are
    /// added to the node set automatically.
    pub fn from_parts<I, S>(nodes: I, triples: &[TripleRecord]) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut label_set: BTreeSet<String> = nodes.into_iter().map(Into::into).collect();
        for t in triples {
            label_set.insert(t.head.clone());
            label_set.insert(t.tail.clone());
        }
        let labels: Vec<String> = label_set.into_iter().collect();
        let index: BTreeMap<String, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect();

        let mut neighbor_sets = vec![BTreeSet::new(); labels.len()];
        let mut provenance = BTreeSet::new();
        for t in triples {
            let h = index[&t.head];
            let tl = index[&t.tail];
            provenance.insert((h, t.relation.clone(), tl));
            if h != tl {
                neighbor_sets[h].insert(tl);
                neighbor_sets[tl].insert(h);
            }
        }
        Self {
            labels,
            index,
            adjacency: neighbor_sets
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            triples: provenance,
        }
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require_id(&self, label: &str) -> Result<usize> {
        self.id(label).ok_or_else(|| Error::NotFound {
            kind: "node",
            name: label.to_string(),
        })
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.adjacency[id]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, ns) in self.adjacency.iter().enumerate() {
            out.extend(ns.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Source triples, by label.
    pub fn triples(&self) -> Vec<TripleRecord> {
        self.triples
            .iter()
            .map(|(h, r, t)| TripleRecord::new(self.label(*h), r.clone(), self.label(*t)))
            .collect()
    }

    /// Triples whose endpoints are both in `keep`.
    pub(crate) fn triples_within(&self, keep: &BTreeSet<usize>) -> Vec<TripleRecord> {
        self.triples
            .iter()
            .filter(|(h, _, t)| keep.contains(h) && keep.contains(t))
            .map(|(h, r, t)| TripleRecord::new(self.label(*h), r.clone(), self.label(*t)))
            .collect()
    }

    /// Copy of this graph restricted to the given undirected edge set.
    /// Provenance triples are kept, including those of dropped edges, so the
    /// graph the edges were selected from can be recovered.
    pub(crate) fn with_edges(&self, keep: &BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); self.labels.len()];
        for &(u, v) in keep {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for ns in &mut adjacency {
            ns.sort_unstable();
        }
        Self {
            labels: self.labels.clone(),
            index: self.index.clone(),
            adjacency,
            triples: self.triples.clone(),
        }
    }
}

/// Parses one triple per line, tab-separated. Blank lines and lines starting
/// with `#` are skipped. Duplicate triples collapse.
pub fn load_triples<R: BufRead>(source: R) -> Result<KnowledgeGraph> {
    let mut records = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                lineno,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (head, relation, tail) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if head.is_empty() || tail.is_empty() {
            return Err(Error::parse(lineno, "empty head or tail label"));
        }
        records.push(TripleRecord::new(head, relation, tail));
    }
    if records.is_empty() {
        return Err(Error::EmptyGraph);
    }
    records.sort();
    records.dedup();
    Ok(KnowledgeGraph::from_parts(std::iter::empty::<String>(), &records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<KnowledgeGraph> {
        load_triples(s.as_bytes())
    }

    #[test]
    fn single_triple() {
        let g = parse("cat\tIsA\tanimal\n").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn duplicate_lines_collapse() {
        let once = parse("cat\tIsA\tanimal\n").unwrap();
        let twice = parse("cat\tIsA\tanimal\ncat\tIsA\tanimal\n").unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn five_line_fixture_matches_hand_drawn_adjacency() {
        let src = "# fixture\n\
                   cat\tIsA\tanimal\n\
                   animal\tIsA\torganism\n\
                   dog\tIsA\tanimal\n\
                   cat\tHasA\twhiskers\n\
                   animal\tIsA\torganism\n";
        let g = parse(src).unwrap();
        // sorted labels: animal(0) cat(1) dog(2) organism(3) whiskers(4)
        assert_eq!(g.labels(), ["animal", "cat", "dog", "organism", "whiskers"]);
        let expected: [&[usize]; 5] = [&[1, 2, 3], &[0, 4], &[0], &[0], &[1]];
        for (id, want) in expected.iter().enumerate() {
            assert_eq!(g.neighbors(id), *want, "node {}", g.label(id));
        }
        assert_eq!(g.edge_count(), 4);
    }

    #[test]
    fn both_directions_stored_once() {
        let g = parse("a\tr\tb\nb\tr\ta\n").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.triples().len(), 2);
    }

    #[test]
    fn empty_relation_is_generic_edge() {
        let g = parse("a\t\tb\n").unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn self_loop_not_stored() {
        let g = parse("a\tr\ta\na\tr\tb\n").unwrap();
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("a\tr\tb\nbroken line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("\tr\tb\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse(""), Err(Error::EmptyGraph)));
        assert!(matches!(parse("# only a comment\n\n"), Err(Error::EmptyGraph)));
    }
}
