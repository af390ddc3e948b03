//! Run configuration: a flat `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Values resolve in the order
//! built-in default, config file, command-line flag; the last writer wins.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use crate::channel::ChannelMode;
use crate::error::{Error, Result};
use crate::eval::{AccuracyMode, EvalConfig, SyntheticSpec};
use crate::gcn::Aggregation;
use crate::kg::{CountMode, SkbSettings, Smoothing};
use crate::pipeline::ModelSpec;
use crate::train::{SimSign, SnrPolicy, TrainConfig};

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; every random stream is derived from it"),
    ("walks_per_node", "random walks started from each node"),
    ("walk_length", "steps per random walk"),
    ("count_mode", "walk visit counting: every-step | endpoint"),
    ("smoothing", "edge-weight smoothing: universe | observed-edges"),
    ("prune_k", "edges kept per node after pruning"),
    ("word_dim", "word-vector dimension"),
    ("semantic_dim", "semantic and embedding dimension"),
    ("symbols", "channel symbols per transmitted vector"),
    ("gcn_layers", "number of GCN layers"),
    ("ln_eps", "layer-norm epsilon"),
    ("aggregation", "GCN neighbour weighting: degree | edge-weighted"),
    ("lr", "Adam learning rate"),
    ("lambda", "weight of the alignment term in stage two"),
    ("batch_size", "training batch size"),
    ("stage1_epochs", "epochs of stage one"),
    ("stage2_epochs", "epochs of stage two"),
    ("train_snr", "stage-two SNR: fixed:DB | uniform:LO:HI"),
    ("sim_sign", "similarity sign: negative | literal"),
    ("freeze_semantic_decoder", "keep the semantic decoder fixed in stage two: true | false"),
    ("gain", "channel gain h in [0, 1]"),
    ("channel_mode", "evaluation channel: analog | digital16qam"),
    ("qam_bits", "quantizer bits per component in digital mode"),
    ("snr_list", "comma-separated evaluation SNRs in dB"),
    ("episodes", "evaluation episodes per SNR"),
    ("practical_fraction", "seen share of the practical mix, in (0, 1)"),
    ("accuracy_mode", "per-class | sample"),
    ("top_n", "categories kept per sample in the similarity export"),
    ("n_seen", "synthetic seen categories"),
    ("n_unseen", "synthetic unseen categories"),
    ("n_attributes", "synthetic attribute nodes"),
    ("samples_per_class", "synthetic training samples per seen category"),
    ("test_per_class", "synthetic test samples per category"),
    ("noise_scale", "synthetic within-class feature noise"),
    ("feature_dim", "visual feature dimension"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub skb: SkbSettings,
    pub word_dim: usize,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub eval: EvalConfig,
    pub top_n: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            skb: SkbSettings::default(),
            word_dim: 300,
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            stage1_epochs: 10,
            stage2_epochs: 20,
            eval: EvalConfig::default(),
            top_n: 5,
            synthetic: SyntheticSpec::default(),
        };
        c.sync();
        c
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}`"),
    })
}

fn named<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        Error::Config {
            key: key.to_string(),
            message: format!("`{value}` is not one of {}", names.join(", ")),
        }
    })
}

const COUNT_MODES: &[(&str, CountMode)] = &[("every-step", CountMode::EveryStep), ("endpoint", CountMode::Endpoint)];
const SMOOTHINGS: &[(&str, Smoothing)] = &[("universe", Smoothing::Universe), ("observed-edges", Smoothing::ObservedEdges)];
const SIGNS: &[(&str, SimSign)] = &[("negative", SimSign::Negative), ("literal", SimSign::Literal)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: T) -> &'static str {
    options.iter().find(|(_, o)| *o == v).map_or("?", |(n, _)| n)
}

impl RunConfig {
    /// Sets one key. Unknown keys and malformed values are errors naming
    /// the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "walks_per_node" => self.skb.walks_per_node = parse(key, v)?,
            "walk_length" => self.skb.walk_length = parse(key, v)?,
            "count_mode" => self.skb.count_mode = choice(key, v, COUNT_MODES)?,
            "smoothing" => self.skb.smoothing = choice(key, v, SMOOTHINGS)?,
            "prune_k" => self.skb.prune_k = parse(key, v)?,
            "word_dim" => self.word_dim = parse(key, v)?,
            "semantic_dim" => self.model.semantic_dim = parse(key, v)?,
            "symbols" => self.model.symbols = parse(key, v)?,
            "gcn_layers" => self.model.gcn_layers = parse(key, v)?,
            "ln_eps" => self.model.ln_eps = parse(key, v)?,
            "aggregation" => self.model.aggregation = named::<Aggregation>(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "stage1_epochs" => self.stage1_epochs = parse(key, v)?,
            "stage2_epochs" => self.stage2_epochs = parse(key, v)?,
            "train_snr" => self.train.snr_policy = named::<SnrPolicy>(key, v)?,
            "sim_sign" => self.train.sim_sign = choice(key, v, SIGNS)?,
            "freeze_semantic_decoder" => self.train.freeze_semantic_decoder = parse(key, v)?,
            "gain" => {
                self.train.gain = parse(key, v)?;
                self.eval.gain = self.train.gain;
            }
            "channel_mode" => self.eval.mode = named::<ChannelMode>(key, v)?,
            "qam_bits" => self.eval.qam_bits = parse(key, v)?,
            "snr_list" => {
                self.eval.snr_list = v
                    .split(',')
                    .map(|s| parse::<f64>(key, s.trim()))
                    .collect::<Result<Vec<_>>>()?
            }
            "episodes" => self.eval.episodes = parse(key, v)?,
            "practical_fraction" => self.eval.practical_fraction = parse(key, v)?,
            "accuracy_mode" => self.eval.accuracy_mode = named::<AccuracyMode>(key, v)?,
            "top_n" => self.top_n = parse(key, v)?,
            "n_seen" => self.synthetic.n_seen = parse(key, v)?,
            "n_unseen" => self.synthetic.n_unseen = parse(key, v)?,
            "n_attributes" => self.synthetic.n_attributes = parse(key, v)?,
            "samples_per_class" => self.synthetic.samples_per_class = parse(key, v)?,
            "test_per_class" => self.synthetic.test_per_class = parse(key, v)?,
            "noise_scale" => self.synthetic.noise_scale = parse(key, v)?,
            "feature_dim" => self.synthetic.feature_dim = parse(key, v)?,
            other => {
                return Err(Error::Config {
                    key: other.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        self.sync();
        self.validate_key(key.trim())
    }

    /// Seeds and shared dimensions flow from their single source keys.
    fn sync(&mut self) {
        self.skb.seed = crate::rng::sub_seed(self.seed, "walk");
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.synthetic.seed = self.seed;
        self.synthetic.word_dim = self.word_dim;
    }

    fn validate_key(&self, key: &str) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::Config {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        match key {
            "gain" if !(0.0..=1.0).contains(&self.train.gain) => bad("must lie in [0, 1]"),
            "practical_fraction" if !(self.eval.practical_fraction > 0.0 && self.eval.practical_fraction < 1.0) => {
                bad("must lie strictly between 0 and 1")
            }
            "episodes" if self.eval.episodes == 0 => bad("must be at least 1"),
            "batch_size" if self.train.batch_size == 0 => bad("must be at least 1"),
            "qam_bits" if self.eval.qam_bits == 0 || self.eval.qam_bits % 2 != 0 || self.eval.qam_bits > 16 => {
                bad("must be even and in 2..=16")
            }
            "lr" if !(self.train.lr >= 0.0) => bad("must be non-negative"),
            "lambda" if !(self.train.lambda >= 0.0) => bad("must be non-negative"),
            "ln_eps" if !(self.model.ln_eps > 0.0) => bad("must be positive"),
            "top_n" if self.top_n == 0 => bad("must be at least 1"),
            _ => Ok(()),
        }
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text<R: BufRead>(&mut self, source: R) -> Result<()> {
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(i + 1, e.to_string()))?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, format!("expected key = value, got `{t}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(std::io::BufReader::new(f))
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| Error::Config {
                key: p.clone(),
                message: "expected key=value".into(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn stage_config(&self, stage: u8) -> TrainConfig {
        TrainConfig {
            epochs: if stage == 1 { self.stage1_epochs } else { self.stage2_epochs },
            ..self.train.clone()
        }
    }

    /// The resolved value of every key, in the syntax [`RunConfig::set`]
    /// accepts.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let snrs: Vec<String> = self.eval.snr_list.iter().map(|s| s.to_string()).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("walks_per_node", self.skb.walks_per_node.to_string()),
            ("walk_length", self.skb.walk_length.to_string()),
            ("count_mode", name_of(COUNT_MODES, self.skb.count_mode).into()),
            ("smoothing", name_of(SMOOTHINGS, self.skb.smoothing).into()),
            ("prune_k", self.skb.prune_k.to_string()),
            ("word_dim", self.word_dim.to_string()),
            ("semantic_dim", self.model.semantic_dim.to_string()),
            ("symbols", self.model.symbols.to_string()),
            ("gcn_layers", self.model.gcn_layers.to_string()),
            ("ln_eps", self.model.ln_eps.to_string()),
            ("aggregation", self.model.aggregation.to_string()),
            ("lr", self.train.lr.to_string()),
            ("lambda", self.train.lambda.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("stage1_epochs", self.stage1_epochs.to_string()),
            ("stage2_epochs", self.stage2_epochs.to_string()),
            ("train_snr", self.train.snr_policy.to_string()),
            ("sim_sign", name_of(SIGNS, self.train.sim_sign).into()),
            ("freeze_semantic_decoder", self.train.freeze_semantic_decoder.to_string()),
            ("gain", self.train.gain.to_string()),
            ("channel_mode", self.eval.mode.to_string()),
            ("qam_bits", self.eval.qam_bits.to_string()),
            ("snr_list", snrs.join(",")),
            ("episodes", self.eval.episodes.to_string()),
            ("practical_fraction", self.eval.practical_fraction.to_string()),
            ("accuracy_mode", self.eval.accuracy_mode.to_string()),
            ("top_n", self.top_n.to_string()),
            ("n_seen", self.synthetic.n_seen.to_string()),
            ("n_unseen", self.synthetic.n_unseen.to_string()),
            ("n_attributes", self.synthetic.n_attributes.to_string()),
            ("samples_per_class", self.synthetic.samples_per_class.to_string()),
            ("test_per_class", self.synthetic.test_per_class.to_string()),
            ("noise_scale", self.synthetic.noise_scale.to_string()),
            ("feature_dim", self.synthetic.feature_dim.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The resolved configuration as a config file.
    pub fn to_text(&self) -> String {
        self.resolved().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_round_trips() {
        let mut c = RunConfig::default();
        c.set("seed", "17").unwrap();
        c.set("snr_list", "-3, 4.5").unwrap();
        c.set("train_snr", "fixed:2").unwrap();
        c.set("count_mode", "endpoint").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(c.to_text().as_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.train.seed, 17);
        assert_eq!(back.eval.snr_list, vec![-3.0, 4.5]);
    }

    #[test]
    fn every_key_resolves_and_is_documented() {
        let keys: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
        let resolved = RunConfig::default().resolved();
        assert_eq!(resolved.keys().map(String::as_str).collect::<Vec<_>>(), {
            let mut k = keys.clone();
            k.sort_unstable();
            k
        });
        for (k, v) in &resolved {
            RunConfig::default().set(k, v).unwrap();
        }
    }

    #[test]
    fn unknown_and_malformed_keys_are_named() {
        let mut c = RunConfig::default();
        match c.set("learning_rate", "1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learning_rate"),
            other => panic!("{other:?}"),
        }
        match c.set("episodes", "many") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "episodes"),
            other => panic!("{other:?}"),
        }
        assert!(c.set("practical_fraction", "1").is_err());
        assert!(c.set("qam_bits", "3").is_err());
        assert!(c.set("channel_mode", "smoke").is_err());
        assert!(c.apply_text("no equals sign\n".as_bytes()).is_err());
    }

    #[test]
    fn later_values_win() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nlr = 0.5\n\nlr=0.25\n".as_bytes()).unwrap();
        assert_eq!(c.train.lr, 0.25);
        c.apply_overrides(&["lr=0.125".to_string()]).unwrap();
        assert_eq!(c.train.lr, 0.125);
        assert_eq!(c.stage_config(1).epochs, c.stage1_epochs);
        assert_eq!(c.stage_config(2).epochs, c.stage2_epochs);
    }
}
