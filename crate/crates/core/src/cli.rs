//! The `semcom` command line.

use std::fs::File;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::channel::ChannelMode;
use crate::config::RunConfig;
use crate::dataset::{FeatureDataset, LabelMap};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_csv, ablation_random_phi, generate_synthetic_world, pca_csv, pca_project, similarity_csv,
    similarity_report, snr_sweep_tables, EvalContext, EvalReport, SnrRow,
};
use crate::kg::{build_knowledge_base, load_triples, load_word_vectors, KnowledgeBase};
use crate::manifest::RunManifest;
use crate::pipeline::{run_stage_one, run_stage_two};
use crate::train::Checkpoint;

#[derive(Debug, Parser)]
#[command(
    name = "semcom",
    version,
    about = "Knowledge-graph enhanced zero-shot semantic communication",
    after_help = "Exit codes: 0 success, 1 pipeline error, 2 usage or I/O error.\n\
                  Run `semcom keys` for the list of configuration keys."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic world: triples, word vectors, train/test features and labels.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the seen and unseen knowledge-base graphs.
    BuildKg {
        #[arg(long)]
        triples: PathBuf,
        #[arg(long)]
        vectors: PathBuf,
        /// Label file naming the seen and unseen categories.
        #[arg(long, required_unless_present = "seen")]
        labels: Option<PathBuf>,
        /// Comma-separated seen categories, instead of --labels.
        #[arg(long, value_delimiter = ',', conflicts_with = "labels")]
        seen: Vec<String>,
        /// Comma-separated unseen categories, instead of --labels.
        #[arg(long, value_delimiter = ',', conflicts_with = "labels")]
        unseen: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one training stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Knowledge base (stage 1).
        #[arg(long, required_if_eq("stage", "1"))]
        skb: Option<PathBuf>,
        /// Stage-one checkpoint (stage 2).
        #[arg(long, required_if_eq("stage", "2"))]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained checkpoint over the SNR list.
    Eval {
        #[command(flatten)]
        io: EvalIo,
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate under several channel modes, one report per mode.
    Sweep {
        #[command(flatten)]
        io: EvalIo,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, value_delimiter = ',', default_values = ["analog", "digital16qam"])]
        modes: Vec<ChannelMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Principal-component coordinates of the category embeddings or of
    /// received semantics.
    ExportPca {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `embeddings`, or `received` (needs --test and --labels).
        #[arg(long, default_value = "embeddings")]
        source: PcaSource,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Top-n similarity scores of received test samples.
    ExportSimilarity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[command(flatten)]
        channel: ChannelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Print every configuration key with its default.
    Keys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PcaSource {
    Embeddings,
    Received,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Computation is sequential, so every value gives the
    /// same bytes; 1 is the reference mode.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    /// Manifest path; each command has its own default.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalIo {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Skip the random-embedding ablation.
    #[arg(long)]
    pub no_ablation: bool,
}

#[derive(Debug, Args)]
pub struct ChannelArgs {
    /// Evaluate at this single SNR instead of the configured list.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long)]
    pub channel_mode: Option<ChannelMode>,
    #[arg(long)]
    pub gain: Option<f64>,
    #[arg(long)]
    pub qam_bits: Option<u32>,
    #[arg(long)]
    pub episodes: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        cfg.apply_overrides(&self.set)?;
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        Ok(cfg)
    }

    fn begin(&self, command: &str, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<RunManifest> {
        let mut resolved = cfg.resolved();
        resolved.insert("threads".into(), self.threads.to_string());
        RunManifest::begin(command, resolved, cfg.seed, inputs)
    }

    fn manifest_path(&self, default: PathBuf) -> PathBuf {
        self.manifest.clone().unwrap_or(default)
    }
}

impl ChannelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.snr_db {
            cfg.set("snr_list", &s.to_string())?;
        }
        if let Some(m) = self.channel_mode {
            cfg.set("channel_mode", &m.to_string())?;
        }
        if let Some(g) = self.gain {
            cfg.set("gain", &g.to_string())?;
        }
        if let Some(b) = self.qam_bits {
            cfg.set("qam_bits", &b.to_string())?;
        }
        if let Some(e) = self.episodes {
            cfg.set("episodes", &e.to_string())?;
        }
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_dataset(path: &Path) -> Result<FeatureDataset> {
    FeatureDataset::read_from(open(path)?)
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    LabelMap::from_tsv(open(path)?)
}

fn read_trained(path: &Path) -> Result<Checkpoint> {
    let c = Checkpoint::load(path)?;
    if c.stage < 2 {
        return Err(Error::Checkpoint(format!(
            "{} has only completed stage {}; run `train --stage 2` first",
            path.display(),
            c.stage
        )));
    }
    Ok(c)
}

fn print_rows(out: &mut impl std::io::Write, title: &str, rows: &[SnrRow]) {
    for r in rows {
        let _ = writeln!(
            out,
            "{title} snr={:>6} dB  seen {:6.2}±{:5.2}  unseen {:6.2}±{:5.2}  xi {:6.2}  practical {:6.2}",
            r.snr_db, r.seen.mean, r.seen.std, r.unseen.mean, r.unseen.std, r.harmonic.mean, r.practical.mean
        );
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Keys => {
            let resolved = RunConfig::default().resolved();
            for (k, help) in crate::config::KEYS {
                let _ = writeln!(out, "{k} = {}    # {help}", resolved[*k]);
            }
            Ok(())
        }
        Command::GenSynthetic { out: dir, common } => {
            let cfg = common.resolve()?;
            let m = common.begin("gen-synthetic", &cfg, &[])?;
            let mut spec = cfg.synthetic;
            spec.seed = cfg.seed;
            let world = generate_synthetic_world(spec)?;
            let files = world.write_to(&dir)?;
            let _ = writeln!(
                out,
                "{} seen and {} unseen categories, {} training and {} test samples written to {}",
                world.seen_categories().len(),
                world.unseen_categories().len(),
                world.train.len(),
                world.test.len(),
                dir.display()
            );
            m.finish(
                &[files.triples, files.vectors, files.train, files.test, files.labels],
                &common.manifest_path(dir.join("manifest.gen-synthetic.json")),
            )?;
            Ok(())
        }
        Command::BuildKg {
            triples,
            vectors,
            labels,
            seen,
            unseen,
            out: path,
            common,
        } => {
            let cfg = common.resolve()?;
            let mut inputs = vec![triples.clone(), vectors.clone()];
            inputs.extend(labels.clone());
            let m = common.begin("build-kg", &cfg, &inputs)?;
            let kg = load_triples(open(&triples)?)?;
            let wv = load_word_vectors(open(&vectors)?, cfg.word_dim)?;
            let (seen, unseen) = match &labels {
                Some(p) => {
                    let l = read_labels(p)?;
                    (l.seen_labels(), l.unseen_labels())
                }
                None => (seen, unseen),
            };
            let kb = build_knowledge_base(&kg, &wv, &seen, &unseen, cfg.skb)?;
            write(&path, &kb.to_json()?)?;
            for part in std::iter::once(&kb.seen).chain(kb.unseen.as_ref()) {
                let c = &part.coverage;
                let _ = writeln!(
                    out,
                    "{} graph: {} nodes, {} edges, {} categories; word vectors {}/{} exact, {} partial, {} missing",
                    part.graph.role,
                    part.graph.node_count(),
                    part.graph.edge_count(),
                    part.graph.category_nodes.len(),
                    c.exact,
                    c.total,
                    c.partial.len(),
                    c.missing.len()
                );
            }
            m.finish(std::slice::from_ref(&path), &common.manifest_path(with_suffix(&path, ".manifest.json")))?;
            Ok(())
        }
        Command::Train {
            stage,
            skb,
            checkpoint,
            train,
            labels,
            out: path,
            loss_csv,
            common,
        } => {
            let cfg = common.resolve()?;
            let prereq = if stage == 1 { skb.clone() } else { checkpoint.clone() }
                .ok_or_else(|| Error::invalid(format!("stage {stage} is missing its prerequisite input")))?;
            let m = common.begin(&format!("train --stage {stage}"), &cfg, &[prereq.clone(), train.clone(), labels.clone()])?;
            let train_set = read_dataset(&train)?;
            let label_map = read_labels(&labels)?;
            let loss_path = loss_csv.unwrap_or_else(|| with_suffix(&path, ".loss.csv"));
            let train_cfg = cfg.stage_config(stage);
            let (ckpt, curve) = if stage == 1 {
                let text = std::fs::read_to_string(&prereq).map_err(|e| Error::io(&prereq, e))?;
                let kb = KnowledgeBase::from_json(&text)?;
                let mut csv = String::from("epoch,loss,accuracy\n");
                let (c, _) = run_stage_one(&kb, &train_set, &label_map, &cfg.model, &train_cfg, |e| {
                    let _ = writeln!(out, "stage 1 epoch {:>3}  loss {:.6}  accuracy {:.4}", e.epoch, e.loss, e.accuracy);
                    csv.push_str(&format!("{},{:.9},{:.6}\n", e.epoch, e.loss, e.accuracy));
                })?;
                (c, csv)
            } else {
                let prev = Checkpoint::load(&prereq)?;
                let mut csv = String::from("epoch,total,recovery,alignment\n");
                let (c, _) = run_stage_two(&prev, &train_set, &label_map, &train_cfg, |e| {
                    let _ = writeln!(
                        out,
                        "stage 2 epoch {:>3}  loss {:.4}  recovery {:.4}  alignment {:.4}",
                        e.epoch, e.total, e.recovery, e.alignment
                    );
                    csv.push_str(&format!("{},{:.9},{:.9},{:.9}\n", e.epoch, e.total, e.recovery, e.alignment));
                })?;
                (c, csv)
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            ckpt.save(&path)?;
            write(&loss_path, &curve)?;
            let _ = writeln!(out, "checkpoint written to {}", path.display());
            m.finish(&[path.clone(), loss_path], &common.manifest_path(with_suffix(&path, ".manifest.json")))?;
            Ok(())
        }
        Command::Eval { io, channel, common } => {
            let mut cfg = common.resolve()?;
            channel.apply(&mut cfg)?;
            let mode = cfg.eval.mode;
            evaluate(&io, &cfg, &common, "eval", &[mode], &mut out)
        }
        Command::Sweep {
            io,
            channel,
            modes,
            common,
        } => {
            let mut cfg = common.resolve()?;
            channel.apply(&mut cfg)?;
            evaluate(&io, &cfg, &common, "sweep", &modes, &mut out)
        }
        Command::ExportPca {
            checkpoint,
            out: path,
            source,
            test,
            labels,
            channel,
            common,
        } => {
            let mut cfg = common.resolve()?;
            channel.apply(&mut cfg)?;
            let mut inputs = vec![checkpoint.clone()];
            inputs.extend(test.clone());
            inputs.extend(labels.clone());
            let m = common.begin("export-pca", &cfg, &inputs)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (csv, ratios) = match source {
                PcaSource::Embeddings => {
                    let (csv, p) = pca_csv(&ckpt.embeddings)?;
                    (csv, p.explained_ratio)
                }
                PcaSource::Received => {
                    let (Some(test), Some(labels)) = (test, labels) else {
                        return Err(Error::invalid("--source received needs --test and --labels"));
                    };
                    let ckpt = read_trained(&checkpoint)?;
                    let ds = read_dataset(&test)?;
                    let lm = read_labels(&labels)?;
                    let ctx = EvalContext::new(&ckpt.codec, &ckpt.embeddings, &ds, &lm, ckpt.sigma_s)?;
                    let s_hat = ctx.receive(cfg.eval.snr_list[0], &cfg.eval, cfg.eval.episode_seed(0))?;
                    let p = pca_project(&s_hat.view(), 2)?;
                    let mut csv = String::from("label,split,pc1,pc2\n");
                    for (i, &t) in ctx.targets().iter().enumerate() {
                        let split = if ckpt.embeddings.is_seen(t) { "seen" } else { "unseen" };
                        csv.push_str(&format!(
                            "{},{split},{:.6},{:.6}\n",
                            ckpt.embeddings.label(t),
                            p.coordinates[[i, 0]],
                            p.coordinates[[i, 1]]
                        ));
                    }
                    (csv, p.explained_ratio)
                }
            };
            write(&path, &csv)?;
            let _ = writeln!(out, "explained variance ratios {:.6} {:.6}", ratios[0], ratios[1]);
            m.finish(std::slice::from_ref(&path), &common.manifest_path(with_suffix(&path, ".manifest.json")))?;
            Ok(())
        }
        Command::ExportSimilarity {
            checkpoint,
            test,
            labels,
            out: path,
            top_n,
            channel,
            common,
        } => {
            let mut cfg = common.resolve()?;
            channel.apply(&mut cfg)?;
            if let Some(n) = top_n {
                cfg.set("top_n", &n.to_string())?;
            }
            let m = common.begin("export-similarity", &cfg, &[checkpoint.clone(), test.clone(), labels.clone()])?;
            let ckpt = read_trained(&checkpoint)?;
            let ds = read_dataset(&test)?;
            let lm = read_labels(&labels)?;
            let ctx = EvalContext::new(&ckpt.codec, &ckpt.embeddings, &ds, &lm, ckpt.sigma_s)?;
            let snr = cfg.eval.snr_list[cfg.eval.snr_list.len() - 1];
            let s_hat = ctx.receive(snr, &cfg.eval, cfg.eval.episode_seed(0))?;
            let rows = similarity_report(&s_hat.view(), ctx.targets(), &ckpt.embeddings, cfg.top_n)?;
            write(&path, &similarity_csv(&rows))?;
            let correct = rows.iter().filter(|r| r.predicted == r.true_label).count();
            let _ = writeln!(out, "{} samples at {snr} dB, {correct} matched their true category", rows.len());
            m.finish(std::slice::from_ref(&path), &common.manifest_path(with_suffix(&path, ".manifest.json")))?;
            Ok(())
        }
    }
}

fn evaluate(
    io: &EvalIo,
    cfg: &RunConfig,
    common: &Common,
    command: &str,
    modes: &[ChannelMode],
    out: &mut impl std::io::Write,
) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::invalid("no channel modes given"));
    }
    let m = common.begin(command, cfg, &[io.checkpoint.clone(), io.test.clone(), io.labels.clone()])?;
    let ckpt = read_trained(&io.checkpoint)?;
    let ds = read_dataset(&io.test)?;
    let lm = read_labels(&io.labels)?;
    let ctx = EvalContext::new(&ckpt.codec, &ckpt.embeddings, &ds, &lm, ckpt.sigma_s)?;
    let random = ablation_random_phi(&ckpt.embeddings, cfg.seed)?;
    let mut outputs = Vec::new();
    for &mode in modes {
        let mut ec = cfg.eval.clone();
        ec.mode = mode;
        let tables = if io.no_ablation {
            vec![&ckpt.embeddings]
        } else {
            vec![&ckpt.embeddings, &random]
        };
        let title = mode.to_string();
        let reports: Vec<EvalReport> = snr_sweep_tables(&ctx, &tables, &ec, |rows| print_rows(out, &title, &rows[..1]))?;
        let suffix = if modes.len() == 1 { String::new() } else { format!("_{mode}") };
        let report = io.out_dir.join(format!("report{suffix}.csv"));
        let per_cat = io.out_dir.join(format!("per_category{suffix}.csv"));
        write(&report, &reports[0].to_csv())?;
        write(&per_cat, &reports[0].per_category_csv())?;
        outputs.extend([report, per_cat]);
        if let Some(r) = reports.get(1) {
            let abl = io.out_dir.join(format!("ablation{suffix}.csv"));
            write(&abl, &ablation_csv(&reports[0], r))?;
            outputs.push(abl);
        }
    }
    m.finish(&outputs, &common.manifest_path(io.out_dir.join(format!("manifest.{command}.json"))))?;
    Ok(())
}
