//! Deterministic attribute-bipartite toy world.
//!
//! Every category is linked to a handful of shared attribute nodes. Word
//! vectors and visual features are both built from per-attribute prototypes,
//! so an unseen category whose attributes all appear among the seen ones can
//! be recognised through the graph.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{FeatureDataset, LabelEntry, LabelMap};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, TripleRecord, WordVectorTable};
use crate::rng::{tagged_rng, Rng};

pub const ATTRIBUTE_RELATION: &str = "HasA";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub n_attributes: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub noise_scale: f64,
    pub word_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_seen: 20,
            n_unseen: 12,
            n_attributes: 16,
            samples_per_class: 50,
            test_per_class: 10,
            noise_scale: 1.0,
            word_dim: 300,
            feature_dim: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub spec: SyntheticSpec,
    pub triples: Vec<TripleRecord>,
    pub word_vectors: WordVectorTable,
    /// Seen categories only.
    pub train: FeatureDataset,
    /// Every category.
    pub test: FeatureDataset,
    pub labels: LabelMap,
    /// Attribute set of each category.
    pub attributes: BTreeMap<String, BTreeSet<String>>,
}

/// Paths written by [`SyntheticWorld::write_to`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldFiles {
    pub triples: PathBuf,
    pub vectors: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
}

impl WorldFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            triples: dir.join("triples.tsv"),
            vectors: dir.join("vectors.txt"),
            train: dir.join("train.bin"),
            test: dir.join("test.bin"),
            labels: dir.join("labels.tsv"),
        }
    }
}

pub fn category_name(i: usize) -> String {
    format!("class{i:02}")
}

pub fn attribute_name(i: usize) -> String {
    format!("attr{i:02}")
}

const MIN_ATTRS: usize = 3;
const MAX_ATTRS: usize = 6;
const MAX_TRIES: usize = 10_000;

fn random_set(rng: &mut Rng, n_attributes: usize, required: &[usize]) -> BTreeSet<usize> {
    let hi = MAX_ATTRS.min(n_attributes);
    let k = rng.random_range(MIN_ATTRS.max(required.len())..=hi.max(required.len()));
    let mut set: BTreeSet<usize> = required.iter().copied().collect();
    let mut pool: Vec<usize> = (0..n_attributes).filter(|a| !set.contains(a)).collect();
    pool.shuffle(rng);
    set.extend(pool.into_iter().take(k - set.len()));
    set
}

/// Attribute sets for the seen then the unseen categories.
fn assign_attributes(spec: &SyntheticSpec, rng: &mut Rng) -> Result<Vec<BTreeSet<usize>>> {
    let infeasible = |why: String| Error::invalid(format!("synthetic world infeasible: {why}"));
    if spec.n_attributes < MIN_ATTRS {
        return Err(infeasible(format!("need at least {MIN_ATTRS} attributes")));
    }
    if spec.n_attributes > MAX_ATTRS * spec.n_seen {
        return Err(infeasible(format!(
            "{} seen categories cannot cover {} attributes",
            spec.n_seen, spec.n_attributes
        )));
    }
    // every attribute goes to at least one seen category
    let mut order: Vec<usize> = (0..spec.n_attributes).collect();
    order.shuffle(rng);
    let mut required = vec![Vec::new(); spec.n_seen];
    for (i, a) in order.into_iter().enumerate() {
        required[i % spec.n_seen].push(a);
    }
    let mut sets: Vec<BTreeSet<usize>> = Vec::new();
    for c in 0..spec.n_seen + spec.n_unseen {
        let req: &[usize] = if c < spec.n_seen { &required[c] } else { &[] };
        let mut found = None;
        for _ in 0..MAX_TRIES {
            let s = random_set(rng, spec.n_attributes, req);
            if !sets.contains(&s) {
                found = Some(s);
                break;
            }
        }
        sets.push(found.ok_or_else(|| infeasible(format!("no distinct attribute set left for {}", category_name(c))))?);
    }
    Ok(sets)
}

fn gaussian_rows(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("std is finite and non-negative");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

fn mean_of(protos: &Array2<f64>, set: &BTreeSet<usize>) -> Array2<f64> {
    let idx: Vec<usize> = set.iter().copied().collect();
    let sel = protos.select(ndarray::Axis(0), &idx);
    sel.mean_axis(ndarray::Axis(0)).expect("non-empty set").insert_axis(ndarray::Axis(0))
}

fn sample_split(
    means: &Array2<f64>,
    classes: std::ops::Range<usize>,
    per_class: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<FeatureDataset> {
    let f = means.ncols();
    let n = classes.len() * per_class;
    let mut x = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    let mut r = 0;
    for c in classes {
        for _ in 0..per_class {
            let mut row = x.row_mut(r);
            row.assign(&means.row(c));
            if noise > 0.0 {
                row.iter_mut().for_each(|v| {
                    let e: f64 = StandardNormal.sample(rng);
                    *v += noise * e;
                });
            }
            labels.push(c as u32);
            r += 1;
        }
    }
    FeatureDataset::new(x, labels)
}

/// Builds the world described by `spec`. The same spec always gives the same
/// world.
pub fn generate_synthetic_world(spec: SyntheticSpec) -> Result<SyntheticWorld> {
    if spec.n_seen == 0 || spec.n_unseen == 0 {
        return Err(Error::invalid("synthetic world needs at least one seen and one unseen category"));
    }
    if spec.samples_per_class == 0 || spec.test_per_class == 0 || spec.word_dim == 0 || spec.feature_dim == 0 {
        return Err(Error::invalid("synthetic world sizes must be positive"));
    }
    if !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
        return Err(Error::invalid(format!("bad noise scale {}", spec.noise_scale)));
    }
    let n_classes = spec.n_seen + spec.n_unseen;
    let sets = assign_attributes(&spec, &mut tagged_rng(spec.seed, "world/structure"))?;

    let mut triples = Vec::new();
    let mut attributes = BTreeMap::new();
    for (c, set) in sets.iter().enumerate() {
        let names: BTreeSet<String> = set.iter().map(|&a| attribute_name(a)).collect();
        for a in &names {
            triples.push(TripleRecord::new(category_name(c), ATTRIBUTE_RELATION, a.clone()));
        }
        attributes.insert(category_name(c), names);
    }
    triples.sort();

    // word vectors: attribute prototypes and noisy category means
    let mut rng = tagged_rng(spec.seed, "world/words");
    let d = spec.word_dim;
    let word_std = (1.0 / d as f64).sqrt();
    let word_protos = gaussian_rows(spec.n_attributes, d, word_std, &mut rng);
    let mut word_vectors = WordVectorTable::new(d);
    for a in 0..spec.n_attributes {
        word_vectors.insert(attribute_name(a), word_protos.row(a).to_vec())?;
    }
    for (c, set) in sets.iter().enumerate() {
        let v = mean_of(&word_protos, set) + gaussian_rows(1, d, 0.1 * word_std, &mut rng);
        word_vectors.insert(category_name(c), v.row(0).to_vec())?;
    }

    let mut rng = tagged_rng(spec.seed, "world/visual");
    let visual_protos = gaussian_rows(spec.n_attributes, spec.feature_dim, 1.0, &mut rng);
    let mut means = Array2::zeros((n_classes, spec.feature_dim));
    for (c, set) in sets.iter().enumerate() {
        means.row_mut(c).assign(&mean_of(&visual_protos, set).row(0));
    }
    let train = sample_split(
        &means,
        0..spec.n_seen,
        spec.samples_per_class,
        spec.noise_scale,
        &mut tagged_rng(spec.seed, "world/train"),
    )?;
    let test = sample_split(
        &means,
        0..n_classes,
        spec.test_per_class,
        spec.noise_scale,
        &mut tagged_rng(spec.seed, "world/test"),
    )?;
    let labels = LabelMap::new(
        (0..n_classes)
            .map(|c| LabelEntry {
                id: c as u32,
                label: category_name(c),
                seen: c < spec.n_seen,
            })
            .collect(),
    )?;
    Ok(SyntheticWorld {
        spec,
        triples,
        word_vectors,
        train,
        test,
        labels,
        attributes,
    })
}

impl SyntheticWorld {
    pub fn knowledge_graph(&self) -> KnowledgeGraph {
        KnowledgeGraph::from_parts(std::iter::empty::<String>(), &self.triples)
    }

    pub fn seen_categories(&self) -> Vec<String> {
        self.labels.seen_labels()
    }

    pub fn unseen_categories(&self) -> Vec<String> {
        self.labels.unseen_labels()
    }

    pub fn triples_tsv(&self) -> String {
        self.triples
            .iter()
            .map(|t| format!("{}\t{}\t{}\n", t.head, t.relation, t.tail))
            .collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<WorldFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = WorldFiles::in_dir(dir);
        let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| Error::io(p, e));
        write(&files.triples, self.triples_tsv())?;
        write(&files.vectors, self.word_vectors.to_text())?;
        write(&files.labels, self.labels.to_tsv())?;
        for (path, ds) in [(&files.train, &self.train), (&files.test, &self.test)] {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            ds.write_to(BufWriter::new(f))?;
        }
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            samples_per_class: 3,
            test_per_class: 2,
            word_dim: 8,
            feature_dim: 16,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn default_counts() {
        let w = generate_synthetic_world(small(1)).unwrap();
        assert_eq!(w.seen_categories().len(), 20);
        assert_eq!(w.unseen_categories().len(), 12);
        assert_eq!(w.train.len(), 20 * 3);
        assert_eq!(w.test.len(), 32 * 2);
        assert!(w.train.labels.iter().all(|&l| l < 20));
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate_synthetic_world(small(5)).unwrap();
        let b = generate_synthetic_world(small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_world(small(6)).unwrap();
        assert_ne!(a.triples, c.triples);
    }

    #[test]
    fn unseen_attributes_covered_by_seen() {
        for seed in 0..20 {
            let w = generate_synthetic_world(small(seed)).unwrap();
            let seen: BTreeSet<&String> = w
                .seen_categories()
                .iter()
                .flat_map(|c| w.attributes[c].iter())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|s| w.attributes.values().flatten().find(|t| *t == s).unwrap())
                .collect();
            let distinct: BTreeSet<&BTreeSet<String>> = w.attributes.values().collect();
            assert_eq!(distinct.len(), 32);
            for c in w.unseen_categories() {
                assert!(w.attributes[&c].iter().all(|a| seen.contains(a)));
            }
            for set in w.attributes.values() {
                assert!((3..=6).contains(&set.len()));
            }
        }
    }

    #[test]
    fn zero_noise_gives_identical_rows() {
        let mut spec = small(2);
        spec.noise_scale = 0.0;
        let w = generate_synthetic_world(spec).unwrap();
        for c in 0..20u32 {
            let rows: Vec<_> = (0..w.train.len()).filter(|&i| w.train.labels[i] == c).collect();
            for &i in &rows[1..] {
                assert_eq!(w.train.features.row(i), w.train.features.row(rows[0]));
            }
        }
    }

    #[test]
    fn infeasible_rejected() {
        let mut spec = small(0);
        spec.n_attributes = 2;
        assert!(generate_synthetic_world(spec).is_err());
        spec.n_attributes = 200;
        assert!(generate_synthetic_world(spec).is_err());
        // only C(4,3) + C(4,4) = 5 distinct sets over 4 attributes
        spec.n_attributes = 4;
        assert!(generate_synthetic_world(spec).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_synthetic_world(small(3)).unwrap();
        let files = w.write_to(dir.path()).unwrap();
        let kg = crate::kg::load_triples(std::io::BufReader::new(File::open(&files.triples).unwrap())).unwrap();
        assert_eq!(kg, w.knowledge_graph());
        let wv = crate::kg::load_word_vectors(std::io::BufReader::new(File::open(&files.vectors).unwrap()), 8).unwrap();
        assert_eq!(wv, w.word_vectors);
        let test = FeatureDataset::read_from(File::open(&files.test).unwrap()).unwrap();
        assert_eq!(test, w.test);
        let labels = LabelMap::from_tsv(std::io::BufReader::new(File::open(&files.labels).unwrap())).unwrap();
        assert_eq!(labels, w.labels);
    }
}
