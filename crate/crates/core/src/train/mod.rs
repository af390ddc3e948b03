//! Two-stage training.
//!
//! Stage one fits the semantic encoder and the GCN jointly so that encoded
//! features land nearest their own category embedding. Stage two freezes
//! both and fits the channel codec (and by default the semantic decoder) to
//! recover clean semantics through a noisy analog channel while staying close
//! to the category embedding.

mod adam;
mod checkpoint;
mod loss;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::channel::{awgn_rows, snr_to_sigma, ChannelMode};
use crate::codec::{CodecStack, SemanticEncoder};
use crate::error::{Error, Result};
use crate::gcn::{GcnModel, Propagation};
use crate::nn::Parameters;
use crate::rng::tagged_rng;

pub use adam::{optimizer_step, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    log_sum_exp, nearest, sim, stage_one_batch, stage_one_loss, stage_two_batch, stage_two_loss, SimSign,
    StageOneBatch, StageTwoTerms,
};

/// Training SNR per example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrPolicy {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl SnrPolicy {
    fn draw(&self, rng: &mut crate::rng::Rng) -> f64 {
        match *self {
            SnrPolicy::Fixed(db) => db,
            SnrPolicy::Uniform { lo, hi } if lo == hi => lo,
            SnrPolicy::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }
}

impl std::fmt::Display for SnrPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SnrPolicy::Fixed(db) => write!(f, "fixed:{db}"),
            SnrPolicy::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

impl std::str::FromStr for SnrPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("SNR policy `{s}` is not fixed:DB or uniform:LO:HI"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["fixed", db] => Ok(SnrPolicy::Fixed(num(db)?)),
            ["uniform", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(bad());
                }
                Ok(SnrPolicy::Uniform { lo, hi })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub snr_policy: SnrPolicy,
    pub gain: f64,
    pub sim_sign: SimSign,
    pub freeze_semantic_decoder: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lambda: 0.9,
            epochs: 20,
            batch_size: 64,
            snr_policy: SnrPolicy::Uniform { lo: -10.0, hi: 15.0 },
            gain: 1.0,
            sim_sign: SimSign::Negative,
            freeze_semantic_decoder: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(Error::invalid("channel gain must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The seen graph as stage one consumes it.
#[derive(Debug, Clone, Copy)]
pub struct SeenGraph<'a> {
    pub propagation: &'a Propagation,
    pub features: &'a Array2<f64>,
    /// Node id of each category; label `k` refers to `category_nodes[k]`.
    pub category_nodes: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOneEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTwoEpoch {
    pub epoch: usize,
    pub total: f64,
    pub recovery: f64,
    pub alignment: f64,
}

fn check_dataset(features: &ArrayView2<f64>, labels: &[usize], classes: usize) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if features.nrows() != labels.len() {
        return Err(Error::DimMismatch {
            context: "training labels",
            expected: features.nrows(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::NotFound {
            kind: "seen category index",
            name: bad.to_string(),
        });
    }
    Ok(())
}

fn batches(n: usize, batch: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Gathers rows of `out` at `nodes`.
fn category_rows(out: &Array2<f64>, nodes: &[usize]) -> Array2<f64> {
    out.select(Axis(0), nodes)
}

/// Minimizes the category cross-entropy over `epochs` passes, recomputing
/// every category embedding with a full GCN forward at each step.
pub fn train_stage_one(
    features: ArrayView2<f64>,
    labels: &[usize],
    graph: SeenGraph<'_>,
    gcn: &mut GcnModel,
    encoder: &mut SemanticEncoder,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&StageOneEpoch),
) -> Result<Vec<StageOneEpoch>> {
    cfg.validate()?;
    check_dataset(&features, labels, graph.category_nodes.len())?;
    if gcn.output_dim() != encoder.output_dim() {
        return Err(Error::DimMismatch {
            context: "GCN output vs semantic dimension",
            expected: encoder.output_dim(),
            actual: gcn.output_dim(),
        });
    }
    let sizes: Vec<usize> = gcn
        .tensors()
        .iter()
        .chain(encoder.tensors().iter())
        .map(|t| t.data.len())
        .collect();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &sizes);
    let mut rng = tagged_rng(cfg.seed, "stage1/shuffle");
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut acc_sum = 0.0;
        for idx in batches(features.nrows(), cfg.batch_size, &mut rng) {
            let x = features.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let (out, gcn_cache) = gcn.forward_cached(graph.propagation, graph.features)?;
            let phi = category_rows(&out, graph.category_nodes);
            let (s, enc_cache) = encoder.forward_cached(&x.view())?;
            let step = stage_one_batch(&s.view(), &y, &phi.view(), cfg.sim_sign)?;
            loss_sum += step.loss * idx.len() as f64;
            acc_sum += step.accuracy * idx.len() as f64;

            let mut enc_grad = encoder.zeros_like();
            encoder.backward(&enc_cache, &step.ds.view(), &mut enc_grad);
            let mut d_out = Array2::zeros(out.raw_dim());
            for (k, &node) in graph.category_nodes.iter().enumerate() {
                let mut r = d_out.row_mut(node);
                r += &step.dphi.row(k);
            }
            let (gcn_grad, _) = gcn.backward(graph.propagation, &gcn_cache, &d_out);

            let grads: Vec<&[f64]> = gcn_grad
                .tensors()
                .into_iter()
                .chain(enc_grad.tensors())
                .map(|t| t.data)
                .collect();
            let mut params = gcn.tensors_mut();
            params.extend(encoder.tensors_mut());
            opt.step(params, &grads)?;
        }
        let n = features.nrows() as f64;
        let stats = StageOneEpoch {
            epoch: epoch + 1,
            loss: loss_sum / n,
            accuracy: acc_sum / n,
        };
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(curve)
}

/// Applies `f` to consecutive row blocks of `x` and stacks the results, so
/// large datasets never need one huge intermediate.
pub fn map_rows(
    x: &ArrayView2<f64>,
    block: usize,
    mut f: impl FnMut(&ArrayView2<f64>) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + block.max(1)).min(x.nrows());
        parts.push(f(&x.slice(ndarray::s![start..end, ..]))?);
        start = end;
    }
    if parts.is_empty() {
        return Err(Error::invalid("no rows"));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))
}

/// Fits the channel encoder, channel decoder and (unless frozen) the semantic
/// decoder. The semantic encoder is only read.
pub fn train_stage_two(
    features: ArrayView2<f64>,
    labels: &[usize],
    seen_phi: ArrayView2<f64>,
    codec: &mut CodecStack,
    cfg: &TrainConfig,
    mode: ChannelMode,
    mut on_epoch: impl FnMut(&StageTwoEpoch),
) -> Result<Vec<StageTwoEpoch>> {
    cfg.validate()?;
    if mode != ChannelMode::Analog {
        return Err(Error::invalid("stage two needs the analog channel; the digital chain has no gradient"));
    }
    check_dataset(&features, labels, seen_phi.nrows())?;
    let clean = map_rows(&features, 256, |b| codec.semantic_encoder.forward(b))?;

    let trained = |c: &CodecStack| {
        let mut v: Vec<usize> = c.channel_encoder.tensors().iter().map(|t| t.data.len()).collect();
        v.extend(c.channel_decoder.tensors().iter().map(|t| t.data.len()));
        if !cfg.freeze_semantic_decoder {
            v.extend(c.semantic_decoder.tensors().iter().map(|t| t.data.len()));
        }
        v
    };
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &trained(codec));
    let mut order_rng = tagged_rng(cfg.seed, "stage2/shuffle");
    let mut snr_rng = tagged_rng(cfg.seed, "stage2/snr");
    let mut noise_rng = tagged_rng(cfg.seed, "stage2/noise");
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 3];
        for idx in batches(features.nrows(), cfg.batch_size, &mut order_rng) {
            let s = clean.select(Axis(0), &idx);
            let phi_y = seen_phi.select(Axis(0), &idx.iter().map(|&i| labels[i]).collect::<Vec<_>>());
            let sigmas = idx
                .iter()
                .map(|_| snr_to_sigma(cfg.snr_policy.draw(&mut snr_rng), 1.0))
                .collect::<Result<Vec<f64>>>()?;

            let (z, enc_cache) = codec.channel_encoder.forward_cached(&s.view())?;
            let z_hat = awgn_rows(&z.view(), cfg.gain, &sigmas, &mut noise_rng)?;
            let (u, dec_cache) = codec.channel_decoder.forward_cached(&z_hat.view())?;
            let s_hat = codec.semantic_decoder.forward(&u.view())?;
            let (terms, ds_hat) = stage_two_batch(&s_hat.view(), &s.view(), &phi_y.view(), cfg.lambda)?;
            let w = idx.len() as f64;
            sums[0] += terms.total * w;
            sums[1] += terms.recovery * w;
            sums[2] += terms.alignment * w;

            let mut g_sd = codec.semantic_decoder.zeros_like();
            let du = codec.semantic_decoder.backward(&u.view(), &ds_hat.view(), &mut g_sd);
            let mut g_cd = codec.channel_decoder.zeros_like();
            let dz_hat = codec.channel_decoder.backward(&dec_cache, &du.view(), &mut g_cd);
            let dz = dz_hat * cfg.gain;
            let mut g_ce = codec.channel_encoder.zeros_like();
            codec.channel_encoder.backward(&enc_cache, &dz.view(), &mut g_ce);

            let mut grads: Vec<&[f64]> = g_ce.tensors().into_iter().map(|t| t.data).collect();
            grads.extend(g_cd.tensors().into_iter().map(|t| t.data));
            if !cfg.freeze_semantic_decoder {
                grads.extend(g_sd.tensors().into_iter().map(|t| t.data));
            }
            let mut params = codec.channel_encoder.tensors_mut();
            params.extend(codec.channel_decoder.tensors_mut());
            if !cfg.freeze_semantic_decoder {
                params.extend(codec.semantic_decoder.tensors_mut());
            }
            opt.step(params, &grads)?;
        }
        let n = features.nrows() as f64;
        let stats = StageTwoEpoch {
            epoch: epoch + 1,
            total: sums[0] / n,
            recovery: sums[1] / n,
            alignment: sums[2] / n,
        };
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(curve)
}

/// Standard deviation of all channel symbols the encoder emits for `features`.
pub fn symbol_std(codec: &CodecStack, features: ArrayView2<f64>) -> Result<f64> {
    let z = map_rows(&features, 256, |b| codec.transmit(b))?;
    let n = z.len() as f64;
    let mean = z.sum() / n;
    Ok((z.mapv(|v| (v - mean) * (v - mean)).sum() / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecDims;
    use crate::nn::parameter_checksum;
    use crate::rng::{rng_from, Rng};
    use rand_distr::{Distribution, StandardNormal};

    /// Four classes on a 4-node path graph; class k's features are centred on
    /// a random prototype.
    struct Toy {
        x: Array2<f64>,
        labels: Vec<usize>,
        prop: Propagation,
        x0: Array2<f64>,
        nodes: Vec<usize>,
    }

    fn toy(samples: usize, feature: usize, rng: &mut Rng) -> Toy {
        let protos: Array2<f64> = Array2::from_shape_simple_fn((4, feature), || StandardNormal.sample(rng));
        let labels: Vec<usize> = (0..samples).map(|i| i % 4).collect();
        let x = Array2::from_shape_fn((samples, feature), |(i, j)| {
            let n: f64 = StandardNormal.sample(rng);
            protos[[labels[i], j]] + 0.3 * n
        });
        let adjacency = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        Toy {
            x,
            labels,
            prop: Propagation::from_adjacency(&adjacency),
            x0: Array2::from_shape_simple_fn((4, 6), || StandardNormal.sample(rng)),
            nodes: vec![0, 1, 2, 3],
        }
    }

    fn fit(seed: u64, lr: f64, epochs: usize) -> (Vec<StageOneEpoch>, GcnModel, SemanticEncoder, Toy) {
        let mut rng = rng_from(seed);
        let t = toy(200, 10, &mut rng);
        let mut gcn = GcnModel::new(&[6, 16, 16], 1e-3, &mut rng).unwrap();
        let mut enc = SemanticEncoder::new(10, 16, &mut rng);
        let cfg = TrainConfig {
            lr,
            epochs,
            batch_size: 16,
            seed,
            ..TrainConfig::default()
        };
        let graph = SeenGraph {
            propagation: &t.prop,
            features: &t.x0,
            category_nodes: &t.nodes,
        };
        let curve = train_stage_one(t.x.view(), &t.labels, graph, &mut gcn, &mut enc, &cfg, |_| {}).unwrap();
        (curve, gcn, enc, t)
    }

    #[test]
    fn stage_one_learns_four_class_world() {
        let (curve, gcn, enc, t) = fit(1, 1e-2, 30);
        for w in curve.windows(2) {
            assert!(w[1].loss <= w[0].loss * 1.05 + 1e-12, "{:?}", curve);
        }
        let out = gcn.forward(&t.prop, &t.x0).unwrap();
        let s = enc.forward(&t.x.view()).unwrap();
        let correct = (0..t.x.nrows())
            .filter(|&i| nearest(s.row(i), &out.view()) == t.labels[i])
            .count();
        assert!(correct as f64 / t.x.nrows() as f64 >= 0.95, "{correct}");
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut rng = rng_from(2);
        toy(200, 10, &mut rng);
        let before_gcn = GcnModel::new(&[6, 16, 16], 1e-3, &mut rng).unwrap();
        let before_enc = SemanticEncoder::new(10, 16, &mut rng);
        let (_, gcn, enc, _) = fit(2, 0.0, 2);
        assert_eq!(parameter_checksum(&gcn), parameter_checksum(&before_gcn));
        assert_eq!(parameter_checksum(&enc), parameter_checksum(&before_enc));
    }

    #[test]
    fn stage_one_is_deterministic() {
        let a = fit(3, 1e-3, 3);
        let b = fit(3, 1e-3, 3);
        assert_eq!(a.0, b.0);
        assert_eq!(parameter_checksum(&a.1), parameter_checksum(&b.1));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut rng = rng_from(4);
        let t = toy(4, 10, &mut rng);
        let mut gcn = GcnModel::new(&[6, 16, 16], 1e-3, &mut rng).unwrap();
        let mut enc = SemanticEncoder::new(10, 16, &mut rng);
        let graph = SeenGraph {
            propagation: &t.prop,
            features: &t.x0,
            category_nodes: &t.nodes,
        };
        let empty = Array2::<f64>::zeros((0, 10));
        let r = train_stage_one(empty.view(), &[], graph, &mut gcn, &mut enc, &TrainConfig::default(), |_| {});
        assert!(r.is_err());
    }

    fn codec_fixture(seed: u64) -> (CodecStack, Array2<f64>, Vec<usize>, Array2<f64>) {
        let mut rng = rng_from(seed);
        let dims = CodecDims {
            feature: 8,
            semantic: 6,
            symbols: 4,
        };
        let mut codec = CodecStack::new(dims, &mut rng);
        // with only 6 hidden units a row can have every unit inactive; the
        // bias keeps s away from the zero vector power normalization rejects
        codec.semantic_encoder.output.bias.fill(0.1);
        let x = Array2::from_shape_simple_fn((40, 8), || StandardNormal.sample(&mut rng));
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let phi = Array2::from_shape_simple_fn((3, 6), || StandardNormal.sample(&mut rng));
        (codec, x, labels, phi)
    }

    #[test]
    fn stage_two_freezes_encoder_and_reproduces() {
        let (mut codec, x, labels, phi) = codec_fixture(5);
        let enc_before = parameter_checksum(&codec.semantic_encoder);
        let cfg = TrainConfig {
            lr: 1e-2,
            epochs: 3,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let curve = train_stage_two(x.view(), &labels, phi.view(), &mut codec, &cfg, ChannelMode::Analog, |_| {}).unwrap();
        assert_eq!(parameter_checksum(&codec.semantic_encoder), enc_before);

        let (mut again, ..) = codec_fixture(5);
        let curve2 = train_stage_two(x.view(), &labels, phi.view(), &mut again, &cfg, ChannelMode::Analog, |_| {}).unwrap();
        assert_eq!(curve, curve2);
        assert_eq!(parameter_checksum(&codec), parameter_checksum(&again));
    }

    #[test]
    fn frozen_semantic_decoder_stays() {
        let (mut codec, x, labels, phi) = codec_fixture(6);
        let before = parameter_checksum(&codec.semantic_decoder);
        let cfg = TrainConfig {
            lr: 1e-2,
            epochs: 1,
            freeze_semantic_decoder: true,
            ..TrainConfig::default()
        };
        train_stage_two(x.view(), &labels, phi.view(), &mut codec, &cfg, ChannelMode::Analog, |_| {}).unwrap();
        assert_eq!(parameter_checksum(&codec.semantic_decoder), before);
    }

    #[test]
    fn digital_mode_rejected() {
        let (mut codec, x, labels, phi) = codec_fixture(7);
        let r = train_stage_two(
            x.view(),
            &labels,
            phi.view(),
            &mut codec,
            &TrainConfig::default(),
            ChannelMode::Digital16qam,
            |_| {},
        );
        assert!(r.is_err());
    }

    #[test]
    fn inverse_toy_codec_starts_near_zero_recovery() {
        // identity semantic encoder on positive unit-power features and
        // identity channel codec: at infinite SNR ŝ = s exactly
        let mut rng = rng_from(8);
        let dims = CodecDims {
            feature: 4,
            semantic: 4,
            symbols: 4,
        };
        let mut codec = CodecStack::new(dims, &mut rng);
        for l in [
            &mut codec.semantic_encoder.hidden,
            &mut codec.semantic_encoder.output,
            &mut codec.channel_encoder.linear,
            &mut codec.channel_decoder.linear,
            &mut codec.semantic_decoder.linear,
        ] {
            l.weight = Array2::eye(4);
        }
        let x = Array2::from_shape_fn((8, 4), |(i, j)| 1.0 + ((i + j) % 3) as f64);
        let x = crate::codec::power_normalize(&x.view()).unwrap();
        let labels = vec![0; 8];
        let phi = Array2::zeros((1, 4));
        let cfg = TrainConfig {
            lr: 0.0,
            lambda: 0.0,
            epochs: 1,
            snr_policy: SnrPolicy::Fixed(f64::INFINITY),
            ..TrainConfig::default()
        };
        let curve = train_stage_two(x.view(), &labels, phi.view(), &mut codec, &cfg, ChannelMode::Analog, |_| {}).unwrap();
        assert!(curve[0].recovery < 1e-20, "{:?}", curve);
    }

    #[test]
    fn snr_policy_parsing() {
        assert_eq!("fixed:5".parse::<SnrPolicy>().unwrap(), SnrPolicy::Fixed(5.0));
        assert_eq!(
            "uniform:-10:15".parse::<SnrPolicy>().unwrap(),
            SnrPolicy::Uniform { lo: -10.0, hi: 15.0 }
        );
        assert!("uniform:3:1".parse::<SnrPolicy>().is_err());
        assert!("gauss:1".parse::<SnrPolicy>().is_err());
        assert_eq!("uniform:-10:15".parse::<SnrPolicy>().unwrap().to_string(), "uniform:-10:15");
    }
}
