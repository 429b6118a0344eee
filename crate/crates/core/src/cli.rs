//! Command-line front end.
//!
//! Data directories hold `train.jsonl`, `test.jsonl`, `items.json` and
//! `stats.json`, as written by `preprocess` and `synth`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{TrainConfig, Variant};
use crate::contrast::{DiscriminatorForm, FactorNegatives, NegativeTerm};
use crate::dataio::{
    boundary_last_days, compact, ingest, prefix_augment, preprocess, read_examples, split, stats,
    write_examples, CorpusStats, Example, IngestOptions, ItemCatalog, PreprocessOptions, Session,
};
use crate::error::{Error, Result};
use crate::harness::report::{
    summary_rows, write_loss_csv, write_metrics, write_metrics_csv, MetricsRow, RunManifest,
};
use crate::harness::synth::{cluster_alignment, planted_corpus, PlantedSpec};
use crate::harness::{ablate, evaluate, train};
use crate::model::{load_checkpoint, save_checkpoint};

#[derive(Debug, Parser)]
#[command(name = "dgcl", version, about = "Dual-granularity contrastive session recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a raw `session,timestamp,item` file into train/test examples.
    Preprocess(PreprocessArgs),
    /// Write the planted-cluster corpus as a data directory.
    Synth(SynthArgs),
    /// Train a model, evaluating on the test split after every epoch.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate several variants under identical settings.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_item_freq: usize,
    #[arg(long, default_value_t = 2)]
    pub min_session_len: usize,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Sessions ending in the last this many days form the test split.
    #[arg(long, default_value_t = 7.0)]
    pub test_days: f64,
    /// Skip the first line of the input.
    #[arg(long)]
    pub header: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub items: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 6)]
    pub session_len: usize,
    #[arg(long, default_value_t = 400)]
    pub train_sessions: usize,
    #[arg(long, default_value_t = 100)]
    pub test_sessions: usize,
}

/// Model and optimizer settings; each flag overrides the config file.
#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    /// TOML file with any `TrainConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_discriminator)]
    pub discriminator: Option<DiscriminatorForm>,
    #[arg(long, value_parser = parse_factor_negatives)]
    pub factor_negatives: Option<FactorNegatives>,
    #[arg(long, value_parser = parse_negative_term)]
    pub negative_term: Option<NegativeTerm>,
    #[arg(long)]
    pub early_stopping_patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Independent runs with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long = "k", default_values_t = [10, 20])]
    pub ks: Vec<usize>,
    /// Dataset label for the metrics table; defaults to the directory name.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines examples.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long = "k", default_values_t = [10, 20])]
    pub ks: Vec<usize>,
    /// Metrics CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub dataset: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, value_delimiter = ',', default_value = "full,fcl,star,fp")]
    pub variants: Vec<Variant>,
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[arg(long = "k", default_values_t = [10, 20])]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub dataset: Option<String>,
}

fn parse_discriminator(s: &str) -> std::result::Result<DiscriminatorForm, String> {
    match s {
        "dot" => Ok(DiscriminatorForm::Dot),
        "bilinear" => Ok(DiscriminatorForm::Bilinear),
        _ => Err(format!("unknown discriminator {s:?} (dot, bilinear)")),
    }
}

fn parse_factor_negatives(s: &str) -> std::result::Result<FactorNegatives, String> {
    match s {
        "within_view" => Ok(FactorNegatives::WithinView),
        "cross_view" => Ok(FactorNegatives::CrossView),
        _ => Err(format!("unknown factor negatives {s:?} (within_view, cross_view)")),
    }
}

fn parse_negative_term(s: &str) -> std::result::Result<NegativeTerm, String> {
    match s {
        "one_minus_sigmoid" => Ok(NegativeTerm::OneMinusSigmoid),
        "sigmoid_of_one_minus" => Ok(NegativeTerm::SigmoidOfOneMinus),
        _ => Err(format!("unknown negative term {s:?} (one_minus_sigmoid, sigmoid_of_one_minus)")),
    }
}

impl ModelFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                TrainConfig::from_toml(&text)?
            }
            None => TrainConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        over!(dim, factors, layers, theta, alpha, beta1, beta2, lr, epochs, batch_size, seed);
        over!(discriminator, factor_negatives, negative_term);
        if self.early_stopping_patience.is_some() {
            c.early_stopping_patience = self.early_stopping_patience;
        }
        c.validate()?;
        Ok(c)
    }
}

pub struct DataDir {
    pub catalog: ItemCatalog,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub stats: Option<CorpusStats>,
}

pub fn write_data_dir(dir: &Path, catalog: &ItemCatalog, train: &[Session], test: &[Session]) -> Result<CorpusStats> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    catalog.save(&dir.join("items.json"))?;
    write_examples(&dir.join("train.jsonl"), &prefix_augment(train))?;
    write_examples(&dir.join("test.jsonl"), &prefix_augment(test))?;
    let s = stats(train, test, catalog);
    let p = dir.join("stats.json");
    std::fs::write(&p, serde_json::to_string_pretty(&s)?).map_err(|e| Error::io(&p, e))?;
    Ok(s)
}

pub fn read_data_dir(dir: &Path) -> Result<DataDir> {
    let catalog = ItemCatalog::load(&dir.join("items.json"))?;
    let n = Some(catalog.len());
    let train = read_examples(&dir.join("train.jsonl"), n)?;
    let test_path = dir.join("test.jsonl");
    let test = if test_path.exists() {
        read_examples(&test_path, n)?
    } else {
        Vec::new()
    };
    let stats = std::fs::read_to_string(dir.join("stats.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    Ok(DataDir {
        catalog,
        train,
        test,
        stats,
    })
}

fn dataset_label(given: &Option<String>, dir: &Path) -> String {
    given.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    })
}

fn run_preprocess(a: &PreprocessArgs) -> Result<()> {
    let ingested = ingest(
        &a.input,
        IngestOptions {
            has_header: a.header,
            delimiter: a.delimiter,
        },
    )?;
    if ingested.malformed > 0 {
        log::warn!("skipped {} malformed lines", ingested.malformed);
    }
    let opts = PreprocessOptions {
        min_item_freq: a.min_item_freq,
        min_session_len: a.min_session_len,
        max_len: a.max_len,
    };
    let (records, catalog) = preprocess(&ingested.events, opts)?;
    let boundary = boundary_last_days(&records, a.test_days);
    let (train_rec, test_rec) = split(records, boundary, a.min_session_len);
    if train_rec.is_empty() {
        return Err(Error::Data("no training sessions before the split boundary".into()));
    }
    let (train_rec, test_rec, catalog) = compact(train_rec, test_rec, &catalog);
    let test_rec: Vec<_> = test_rec
        .into_iter()
        .filter(|r| r.session.len() >= a.min_session_len)
        .collect();
    let sessions = |rs: Vec<crate::dataio::SessionRecord>| rs.into_iter().map(|r| r.session).collect::<Vec<_>>();
    let s = write_data_dir(&a.out, &catalog, &sessions(train_rec), &sessions(test_rec))?;
    println!("{}", serde_json::to_string(&s)?);
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    if a.clusters == 0 || a.items % a.clusters != 0 || a.session_len > a.items / a.clusters || a.session_len < 2 {
        return Err(Error::Config(format!(
            "{} items in {} clusters cannot hold sessions of {}",
            a.items, a.clusters, a.session_len
        )));
    }
    let spec = PlantedSpec {
        items: a.items,
        clusters: a.clusters,
        session_len: a.session_len,
        train_sessions: a.train_sessions,
        test_sessions: a.test_sessions,
    };
    let c = planted_corpus(spec, a.seed);
    let s = write_data_dir(&a.out, &c.catalog, &c.train, &c.test)?;
    let clusters: Vec<String> = c.cluster_of.iter().map(|x| x.to_string()).collect();
    let p = a.out.join("clusters.txt");
    std::fs::write(&p, clusters.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
    println!("{}", serde_json::to_string(&s)?);
    Ok(())
}

fn read_clusters(dir: &Path) -> Option<Vec<usize>> {
    let text = std::fs::read_to_string(dir.join("clusters.txt")).ok()?;
    text.lines().map(|l| l.trim().parse().ok()).collect()
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let mut cfg = a.model.resolve()?;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    if a.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let data = read_data_dir(&a.data)?;
    let dataset = dataset_label(&a.dataset, &a.data);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let test = (!data.test.is_empty()).then_some(data.test.as_slice());
    let seeds: Vec<u64> = (0..a.repeats).map(|r| cfg.seed + r).collect();
    let mut rows = Vec::new();
    for &seed in &seeds {
        let c = TrainConfig { seed, ..cfg.clone() };
        let out = train(&c, &data.train, data.catalog.len(), test, &a.ks)?;
        let suffix = if seeds.len() == 1 { String::new() } else { format!("_seed{seed}") };
        write_loss_csv(&a.out.join(format!("losses{suffix}.csv")), &out.steps)?;
        save_checkpoint(&a.out.join(format!("checkpoint{suffix}")), &out.params, &c)?;
        for r in &out.reports {
            rows.extend(MetricsRow::from_report(&dataset, c.variant.name(), &seed.to_string(), r));
        }
        if let Some(clusters) = read_clusters(&a.data) {
            let (intra, inter) = cluster_alignment(out.params.embedding.view(), &clusters);
            log::info!("seed {seed}: intra-cluster cosine {intra:.4}, inter-cluster {inter:.4}");
        }
    }
    if seeds.len() > 1 {
        let summary = summary_rows(&rows);
        rows.extend(summary);
    }
    write_metrics_csv(&a.out.join("metrics.csv"), &a.ks, &rows)?;
    let mut manifest = RunManifest::new("train", &dataset, &cfg, seeds);
    manifest.corpus = data.stats;
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let test = read_examples(&a.test, Some(params.num_items()))?;
    let report = evaluate(&params, &cfg, &test, &a.ks, 0)?;
    let rows = MetricsRow::from_report(&a.dataset, cfg.variant.name(), &cfg.seed.to_string(), &report);
    match &a.out {
        Some(p) => write_metrics_csv(p, &a.ks, &rows),
        None => write_metrics(std::io::stdout().lock(), &a.ks, &rows),
    }
}

fn run_ablate(a: &AblateArgs) -> Result<()> {
    let start = Instant::now();
    let cfg = a.model.resolve()?;
    if a.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let data = read_data_dir(&a.data)?;
    if data.test.is_empty() {
        return Err(Error::Data(format!("{} has no test examples", a.data.display())));
    }
    let dataset = dataset_label(&a.dataset, &a.data);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let seeds: Vec<u64> = (0..a.repeats).map(|r| cfg.seed + r).collect();
    let results = ablate(&cfg, &a.variants, &seeds, &data.train, &data.test, data.catalog.len(), &a.ks)?;
    let mut rows = Vec::new();
    for r in &results {
        rows.extend(MetricsRow::from_report(&dataset, r.variant.name(), &r.seed.to_string(), &r.report));
    }
    if seeds.len() > 1 {
        let summary = summary_rows(&rows);
        rows.extend(summary);
    }
    write_metrics_csv(&a.out.join("ablation.csv"), &a.ks, &rows)?;
    let mut manifest = RunManifest::new("ablate", &dataset, &cfg, seeds);
    manifest.corpus = data.stats;
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();
    manifest.write(&a.out.join("manifest.json"))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Preprocess(a) => run_preprocess(a),
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
    }
}

/// Parses `std::env::args`, runs the command, and returns the exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
