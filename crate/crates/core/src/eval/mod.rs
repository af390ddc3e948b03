//! Zero-shot evaluation over the full label space, SNR sweeps, ablations and
//! exports.

mod classify;
mod metrics;
mod pca;
mod similarity;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{awgn_analog, digital_channel, snr_to_sigma, ChannelMode, QamConfig};
use crate::codec::CodecStack;
use crate::dataset::{FeatureDataset, LabelMap};
use crate::error::{Error, Result};
use crate::gcn::CategoryEmbeddingTable;
use crate::rng::{rng_from, sub_seed, tagged_rng};

pub use classify::{classify, classify_batch, squared_distances};
pub use metrics::{accuracy, harmonic_mean, per_class_accuracy, sample_accuracy, MeanStd};
pub use pca::{pca_project, Pca};
pub use similarity::{similarity_report, similarity_csv, SimilarityRow};
pub use synthetic::{attribute_name, category_name, generate_synthetic_world, SyntheticSpec, SyntheticWorld, WorldFiles};

/// How per-split accuracy is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccuracyMode {
    /// Mean of per-class accuracies.
    #[default]
    PerClass,
    /// Fraction of correct samples.
    Sample,
}

impl std::fmt::Display for AccuracyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AccuracyMode::PerClass => "per-class",
            AccuracyMode::Sample => "sample",
        })
    }
}

impl FromStr for AccuracyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-class" | "per_class" => Ok(AccuracyMode::PerClass),
            "sample" => Ok(AccuracyMode::Sample),
            other => Err(Error::invalid(format!("unknown accuracy mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub snr_list: Vec<f64>,
    pub episodes: usize,
    pub mode: ChannelMode,
    pub gain: f64,
    /// Quantizer bits per component in digital mode.
    pub qam_bits: u32,
    /// Expected share of seen samples in the practical mix.
    pub practical_fraction: f64,
    pub accuracy_mode: AccuracyMode,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_list: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0],
            episodes: 100,
            mode: ChannelMode::Analog,
            gain: 1.0,
            qam_bits: 8,
            practical_fraction: 0.7,
            accuracy_mode: AccuracyMode::PerClass,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_list.is_empty() {
            return Err(Error::invalid("SNR list is empty"));
        }
        if let Some(s) = self.snr_list.iter().find(|s| s.is_nan()) {
            return Err(Error::invalid(format!("bad SNR {s}")));
        }
        if self.episodes == 0 {
            return Err(Error::invalid("episodes must be at least 1"));
        }
        if !(self.practical_fraction > 0.0 && self.practical_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "practical seen fraction {} outside (0, 1)",
                self.practical_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(Error::invalid(format!("channel gain {} outside [0, 1]", self.gain)));
        }
        QamConfig::new(self.qam_bits, -1.0, 1.0)?;
        Ok(())
    }

    /// Seed of episode `i`: `master + i`.
    pub fn episode_seed(&self, episode: usize) -> u64 {
        self.seed.wrapping_add(episode as u64)
    }

    pub fn echo(&self) -> BTreeMap<String, String> {
        let snrs: Vec<String> = self.snr_list.iter().map(|s| s.to_string()).collect();
        [
            ("snr_list", snrs.join(",")),
            ("episodes", self.episodes.to_string()),
            ("channel_mode", self.mode.to_string()),
            ("gain", self.gain.to_string()),
            ("qam_bits", self.qam_bits.to_string()),
            ("practical_fraction", self.practical_fraction.to_string()),
            ("accuracy_mode", self.accuracy_mode.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Draws `count` sample indices with replacement: each draw picks a seen
/// sample with probability `fraction`, otherwise an unseen one.
pub fn practical_mix_sample(seen: &[bool], fraction: f64, count: usize, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("seen fraction {fraction} outside (0, 1)")));
    }
    let (s, u): (Vec<usize>, Vec<usize>) = (0..seen.len()).partition(|&i| seen[i]);
    if s.is_empty() || u.is_empty() {
        return Err(Error::invalid("practical mix needs both seen and unseen samples"));
    }
    let mut rng = rng_from(seed);
    Ok((0..count)
        .map(|_| {
            let pool = if rng.random::<f64>() < fraction { &s } else { &u };
            pool[rng.random_range(0..pool.len())]
        })
        .collect())
}

/// Copy of `table` whose unseen rows are random Gaussian directions scaled to
/// the norm of the row they replace.
pub fn ablation_random_phi(table: &CategoryEmbeddingTable, seed: u64) -> Result<CategoryEmbeddingTable> {
    let mut rng = tagged_rng(seed, "ablation");
    let mut replacements = Vec::new();
    for (label, seen, v) in table.entries() {
        if seen {
            continue;
        }
        let norm = v.dot(&v).sqrt();
        let mut r: Vec<f64> = (0..v.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x *= norm / rn);
        replacements.push((label.to_string(), r));
    }
    table.with_replaced(&replacements)
}

/// One episode's accuracies, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub seen: f64,
    pub unseen: f64,
    /// `ξ` of this episode; zero when both accuracies are zero.
    pub harmonic: f64,
    pub practical: f64,
}

/// A test set pushed through the transmitter once, ready for repeated
/// noisy episodes.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    codec: &'a CodecStack,
    labels: Vec<String>,
    seen_flags: Vec<bool>,
    z: Array2<f64>,
    /// Table row of each sample's true category.
    targets: Vec<usize>,
    sample_seen: Vec<bool>,
    sigma_s: f64,
}

impl<'a> EvalContext<'a> {
    /// `table` fixes the label space and must hold every category that
    /// appears in `test`.
    pub fn new(
        codec: &'a CodecStack,
        table: &CategoryEmbeddingTable,
        test: &FeatureDataset,
        label_map: &LabelMap,
        sigma_s: f64,
    ) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::invalid("test set is empty"));
        }
        if test.dim() != codec.dims().feature {
            return Err(Error::DimMismatch {
                context: "test features",
                expected: codec.dims().feature,
                actual: test.dim(),
            });
        }
        if table.dim() != codec.dims().semantic {
            return Err(Error::DimMismatch {
                context: "category embeddings",
                expected: codec.dims().semantic,
                actual: table.dim(),
            });
        }
        let mut targets = Vec::with_capacity(test.len());
        let mut sample_seen = Vec::with_capacity(test.len());
        for &id in &test.labels {
            let entry = label_map.require(id)?;
            let row = table.index_of(&entry.label).ok_or_else(|| Error::NotFound {
                kind: "category embedding",
                name: entry.label.clone(),
            })?;
            targets.push(row);
            sample_seen.push(table.is_seen(row));
        }
        let z = crate::train::map_rows(&test.features.view(), 256, |b| codec.transmit(b))?;
        Ok(Self {
            codec,
            labels: table.labels().to_vec(),
            seen_flags: (0..table.len()).map(|i| table.is_seen(i)).collect(),
            z,
            targets,
            sample_seen,
            sigma_s,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Transmitted symbols, one row per test sample.
    pub fn symbols(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Received semantics for one channel realisation.
    pub fn receive(&self, snr_db: f64, cfg: &EvalConfig, seed: u64) -> Result<Array2<f64>> {
        let mut rng = tagged_rng(seed, "eval/noise");
        let z_hat = match cfg.mode {
            ChannelMode::Analog => awgn_analog(&self.z.view(), cfg.gain, snr_to_sigma(snr_db, 1.0)?, &mut rng),
            ChannelMode::Digital16qam => {
                let sigma_s = if self.sigma_s > 0.0 { self.sigma_s } else { 1.0 };
                let q = QamConfig::for_symbol_std(cfg.qam_bits, sigma_s)?;
                digital_channel(&self.z.view(), cfg.gain, snr_db, &q, &mut rng)?
            }
        };
        crate::train::map_rows(&z_hat.view(), 256, |b| self.codec.receive(b))
    }

    /// Scores predictions for every sample against their targets.
    pub fn score(&self, predictions: &[usize], cfg: &EvalConfig, seed: u64) -> Result<(EpisodeResult, BTreeMap<usize, f64>)> {
        let pick = |want: bool| -> (Vec<usize>, Vec<usize>) {
            (0..self.len())
                .filter(|&i| self.sample_seen[i] == want)
                .map(|i| (predictions[i], self.targets[i]))
                .unzip()
        };
        let cats = |want: bool| -> Vec<usize> { (0..self.labels.len()).filter(|&c| self.seen_flags[c] == want).collect() };
        let split = |want: bool| -> Result<f64> {
            let (p, y) = pick(want);
            if y.is_empty() {
                return Ok(0.0);
            }
            match cfg.accuracy_mode {
                AccuracyMode::PerClass => accuracy(&p, &y, &cats(want)),
                AccuracyMode::Sample => sample_accuracy(&p, &y),
            }
        };
        let seen = split(true)?;
        let unseen = split(false)?;
        let harmonic = harmonic_mean(seen, unseen).unwrap_or(0.0);
        let practical = if self.sample_seen.iter().any(|&s| s) && self.sample_seen.iter().any(|&s| !s) {
            let idx = practical_mix_sample(&self.sample_seen, cfg.practical_fraction, self.len(), sub_seed(seed, "eval/mix"))?;
            let p: Vec<usize> = idx.iter().map(|&i| predictions[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| self.targets[i]).collect();
            sample_accuracy(&p, &y)?
        } else {
            0.0
        };
        let all: Vec<usize> = (0..self.labels.len()).collect();
        let per_class = per_class_accuracy(predictions, &self.targets, &all)?;
        Ok((
            EpisodeResult {
                seen,
                unseen,
                harmonic,
                practical,
            },
            per_class,
        ))
    }
}

/// One episode at one SNR, scored against each embedding table in turn. All
/// tables see the same received semantics.
pub fn evaluate_episode(
    ctx: &EvalContext<'_>,
    tables: &[&CategoryEmbeddingTable],
    snr_db: f64,
    cfg: &EvalConfig,
    episode: usize,
) -> Result<Vec<(EpisodeResult, BTreeMap<usize, f64>)>> {
    let seed = cfg.episode_seed(episode);
    let s_hat = ctx.receive(snr_db, cfg, seed)?;
    tables
        .iter()
        .map(|t| {
            if t.labels() != ctx.labels() {
                return Err(Error::invalid("embedding table does not match the evaluation label space"));
            }
            let preds = classify_batch(&s_hat.view(), &t.vectors().view())?;
            ctx.score(&preds, cfg, seed)
        })
        .collect()
}

/// Summary of one SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub seen: MeanStd,
    pub unseen: MeanStd,
    /// Mean is `ξ(seen.mean, unseen.mean)`; std is over per-episode `ξ`.
    pub harmonic: MeanStd,
    pub practical: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub snr_db: f64,
    pub label: String,
    pub seen: bool,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<SnrRow>,
    pub per_category: Vec<CategoryRow>,
    pub config: BTreeMap<String, String>,
}

fn fmt_snr(s: f64) -> String {
    format!("{s}")
}

impl EvalReport {
    pub fn row(&self, snr_db: f64) -> Option<&SnrRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db)
    }

    /// `snr_db,metric,mean,std`, four metrics per SNR.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snr_db,metric,mean,std\n");
        for r in &self.rows {
            for (name, m) in [
                ("seen", r.seen),
                ("unseen", r.unseen),
                ("harmonic", r.harmonic),
                ("practical", r.practical),
            ] {
                let _ = writeln!(out, "{},{name},{:.6},{:.6}", fmt_snr(r.snr_db), m.mean, m.std);
            }
        }
        out
    }

    /// `snr_db,label,split,accuracy`; accuracy is the mean over episodes.
    pub fn per_category_csv(&self) -> String {
        let mut out = String::from("snr_db,label,split,accuracy\n");
        for c in &self.per_category {
            let split = if c.seen { "seen" } else { "unseen" };
            let _ = writeln!(out, "{},{},{split},{:.6}", fmt_snr(c.snr_db), c.label, c.accuracy);
        }
        out
    }
}

struct Accumulator {
    episodes: Vec<EpisodeResult>,
    per_class: BTreeMap<usize, Vec<f64>>,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            episodes: Vec::new(),
            per_class: BTreeMap::new(),
        }
    }

    fn push(&mut self, (e, pc): (EpisodeResult, BTreeMap<usize, f64>)) {
        self.episodes.push(e);
        for (c, a) in pc {
            self.per_class.entry(c).or_default().push(a);
        }
    }

    fn finish(self, snr_db: f64, ctx: &EvalContext<'_>) -> Result<(SnrRow, Vec<CategoryRow>)> {
        let col = |f: fn(&EpisodeResult) -> f64| MeanStd::of(&self.episodes.iter().map(f).collect::<Vec<_>>());
        let seen = col(|e| e.seen);
        let unseen = col(|e| e.unseen);
        let harmonic = MeanStd {
            mean: harmonic_mean(seen.mean, unseen.mean).unwrap_or(0.0),
            std: col(|e| e.harmonic).std,
        };
        let row = SnrRow {
            snr_db,
            seen,
            unseen,
            harmonic,
            practical: col(|e| e.practical),
        };
        let cats = self
            .per_class
            .into_iter()
            .map(|(c, v)| CategoryRow {
                snr_db,
                label: ctx.labels[c].clone(),
                seen: ctx.seen_flags[c],
                accuracy: MeanStd::of(&v).mean,
            })
            .collect();
        Ok((row, cats))
    }
}

/// Runs `cfg.episodes` episodes at every SNR and returns one report per
/// table. Episode seeds are shared across SNRs and tables.
pub fn snr_sweep_tables(
    ctx: &EvalContext<'_>,
    tables: &[&CategoryEmbeddingTable],
    cfg: &EvalConfig,
    mut on_snr: impl FnMut(&[SnrRow]),
) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let mut reports: Vec<EvalReport> = tables
        .iter()
        .map(|_| EvalReport {
            rows: Vec::new(),
            per_category: Vec::new(),
            config: cfg.echo(),
        })
        .collect();
    for &snr in &cfg.snr_list {
        let mut acc: Vec<Accumulator> = tables.iter().map(|_| Accumulator::new()).collect();
        for ep in 0..cfg.episodes {
            for (a, r) in acc.iter_mut().zip(evaluate_episode(ctx, tables, snr, cfg, ep)?) {
                a.push(r);
            }
        }
        let mut rows = Vec::new();
        for (a, rep) in acc.into_iter().zip(&mut reports) {
            let (row, cats) = a.finish(snr, ctx)?;
            rows.push(row);
            rep.rows.push(row);
            rep.per_category.extend(cats);
        }
        on_snr(&rows);
    }
    Ok(reports)
}

pub fn snr_sweep(ctx: &EvalContext<'_>, table: &CategoryEmbeddingTable, cfg: &EvalConfig) -> Result<EvalReport> {
    Ok(snr_sweep_tables(ctx, &[table], cfg, |_| {})?.remove(0))
}

/// True and random-unseen-φ reports side by side:
/// `snr_db,variant,metric,mean,std`.
pub fn ablation_csv(truth: &EvalReport, random: &EvalReport) -> String {
    let mut out = String::from("snr_db,variant,metric,mean,std\n");
    for (variant, rep) in [("true", truth), ("random", random)] {
        for r in &rep.rows {
            for (name, m) in [("seen", r.seen), ("unseen", r.unseen), ("harmonic", r.harmonic)] {
                let _ = writeln!(out, "{},{variant},{name},{:.6},{:.6}", fmt_snr(r.snr_db), m.mean, m.std);
            }
        }
    }
    out
}

/// `label,split,pc1,pc2` for the rows of an embedding table.
pub fn pca_csv(table: &CategoryEmbeddingTable) -> Result<(String, Pca)> {
    let p = pca_project(&table.vectors().view(), 2)?;
    let mut out = String::from("label,split,pc1,pc2\n");
    for (i, row) in p.coordinates.axis_iter(Axis(0)).enumerate() {
        let split = if table.is_seen(i) { "seen" } else { "unseen" };
        let _ = writeln!(out, "{},{split},{:.6},{:.6}", table.label(i), row[0], row[1]);
    }
    Ok((out, p))
}

/// Mean received-semantics vector per true category, useful for projecting
/// decoded features next to their embeddings.
pub fn class_means(s_hat: &ArrayView2<f64>, targets: &[usize], n_classes: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((n_classes, s_hat.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &t) in s_hat.rows().into_iter().zip(targets) {
        let mut acc = sums.row_mut(t);
        acc += &row;
        counts[t] += 1;
    }
    for (mut row, &n) in sums.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            row.mapv_inplace(|v| v / n as f64);
        }
    }
    sums
}
