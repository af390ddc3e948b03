//! Glue between the knowledge base, the two training stages and the
//! checkpoint.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::codec::{CodecDims, CodecStack};
use crate::dataset::{FeatureDataset, LabelMap};
use crate::error::{Error, Result};
use crate::gcn::{embeddings_with, Aggregation, CategoryEmbeddingTable, GcnModel, Propagation};
use crate::kg::KnowledgeBase;
use crate::rng::tagged_rng;
use crate::train::{self, Checkpoint, SeenGraph, StageOneEpoch, StageTwoEpoch, TrainConfig};

/// Architecture choices fixed when a model is created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub semantic_dim: usize,
    pub symbols: usize,
    pub gcn_layers: usize,
    pub ln_eps: f64,
    pub aggregation: Aggregation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            semantic_dim: 2049,
            symbols: 512,
            gcn_layers: 2,
            ln_eps: 1e-3,
            aggregation: Aggregation::Degree,
        }
    }
}

impl ModelSpec {
    pub fn echo(&self) -> BTreeMap<String, String> {
        [
            ("semantic_dim", self.semantic_dim.to_string()),
            ("symbols", self.symbols.to_string()),
            ("gcn_layers", self.gcn_layers.to_string()),
            ("ln_eps", self.ln_eps.to_string()),
            ("aggregation", self.aggregation.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Index of each sample's category among `categories`.
pub fn category_indices(ds: &FeatureDataset, labels: &LabelMap, categories: &[String]) -> Result<Vec<usize>> {
    ds.labels
        .iter()
        .map(|&id| {
            let name = &labels.require(id)?.label;
            categories.binary_search(name).map_err(|_| Error::NotFound {
                kind: "category in knowledge base",
                name: name.clone(),
            })
        })
        .collect()
}

/// Embeddings of every seen and unseen category in `kb` under `gcn`.
pub fn all_embeddings(gcn: &GcnModel, kb: &KnowledgeBase, aggregation: Aggregation) -> Result<CategoryEmbeddingTable> {
    let seen = embeddings_with(gcn, &kb.seen.graph, &kb.seen.features, aggregation)?;
    match &kb.unseen {
        Some(u) => seen.merge(&embeddings_with(gcn, &u.graph, &u.features, aggregation)?),
        None => Ok(seen),
    }
}

/// Stage one from scratch: initialises the GCN and codec, fits the GCN and
/// semantic encoder on the seen training data, then embeds every category.
pub fn run_stage_one(
    kb: &KnowledgeBase,
    train_set: &FeatureDataset,
    labels: &LabelMap,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&StageOneEpoch),
) -> Result<(Checkpoint, Vec<StageOneEpoch>)> {
    if spec.gcn_layers == 0 {
        return Err(Error::invalid("the GCN needs at least one layer"));
    }
    let word_dim = kb.seen.features.dim();
    let mut dims = vec![word_dim];
    dims.extend(std::iter::repeat_n(spec.semantic_dim, spec.gcn_layers));
    let mut gcn = GcnModel::new(&dims, spec.ln_eps, &mut tagged_rng(cfg.seed, "init/gcn"))?;
    let codec_dims = CodecDims {
        feature: train_set.dim(),
        semantic: spec.semantic_dim,
        symbols: spec.symbols,
    };
    let mut codec = CodecStack::new(codec_dims, &mut tagged_rng(cfg.seed, "init/codec"));

    let seen = kb.seen.graph.category_labels();
    let y = category_indices(train_set, labels, &seen)?;
    let prop = Propagation::new(&kb.seen.graph, spec.aggregation)?;
    let graph = SeenGraph {
        propagation: &prop,
        features: &kb.seen.features.values,
        category_nodes: &kb.seen.graph.category_nodes,
    };
    let curve = train::train_stage_one(
        train_set.features.view(),
        &y,
        graph,
        &mut gcn,
        &mut codec.semantic_encoder,
        cfg,
        on_epoch,
    )?;
    let embeddings = all_embeddings(&gcn, kb, spec.aggregation)?;
    let mut config = spec.echo();
    config.extend(train_echo(cfg, "stage1"));
    Ok((
        Checkpoint {
            stage: 1,
            gcn,
            codec,
            embeddings,
            sigma_s: 0.0,
            config,
        },
        curve,
    ))
}

/// Stage two on top of a stage-one checkpoint.
pub fn run_stage_two(
    ckpt: &Checkpoint,
    train_set: &FeatureDataset,
    labels: &LabelMap,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&StageTwoEpoch),
) -> Result<(Checkpoint, Vec<StageTwoEpoch>)> {
    if ckpt.stage < 1 {
        return Err(Error::Checkpoint("stage two needs a stage-one checkpoint".into()));
    }
    let seen: Vec<String> = ckpt
        .embeddings
        .entries()
        .filter(|(_, s, _)| *s)
        .map(|(l, _, _)| l.to_string())
        .collect();
    let y = category_indices(train_set, labels, &seen)?;
    let mut phi = Array2::zeros((seen.len(), ckpt.embeddings.dim()));
    for (k, l) in seen.iter().enumerate() {
        phi.row_mut(k).assign(&ckpt.embeddings.get(l).expect("label taken from the table"));
    }
    let mut out = ckpt.clone();
    let curve = train::train_stage_two(
        train_set.features.view(),
        &y,
        phi.view(),
        &mut out.codec,
        cfg,
        crate::channel::ChannelMode::Analog,
        on_epoch,
    )?;
    out.sigma_s = train::symbol_std(&out.codec, train_set.features.view())?;
    out.stage = 2;
    out.config.extend(train_echo(cfg, "stage2"));
    Ok((out, curve))
}

fn train_echo(cfg: &TrainConfig, prefix: &str) -> BTreeMap<String, String> {
    [
        ("lr", cfg.lr.to_string()),
        ("lambda", cfg.lambda.to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("snr_policy", cfg.snr_policy.to_string()),
        ("gain", cfg.gain.to_string()),
        ("sim_sign", format!("{:?}", cfg.sim_sign).to_lowercase()),
        ("freeze_semantic_decoder", cfg.freeze_semantic_decoder.to_string()),
        ("seed", cfg.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{prefix}.{k}"), v))
    .collect()
}
