//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::eval::evaluate;
use crate::graph::build_laplacian;
use crate::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::io::config::{write_history, write_manifest, write_pretrain_history, RunConfig};
use crate::io::dataset::{load_dir, write_split, DatasetSplit};
use crate::io::synth::{generate_synthetic, SynthConfig};
use crate::kernel::DenseMatrix;
use crate::ngcf::InitMode;
use crate::trainer::{grid_search, initial_embeddings, train};
use crate::vgae::{export_embeddings, sample_embeddings, stream_rng, train_vgae, EncoderConfig, EncoderMode};

#[derive(Debug, Parser)]
#[command(name = "gvecf", version, about = "Graph collaborative filtering with variational-embedding pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train the graph auto-encoder and save its embeddings.
    Pretrain(RunArgs),
    /// Train the recommender from variational, GAE or Xavier embeddings.
    Train(RunArgs),
    /// Score a saved model on a dataset's test split.
    Evaluate(EvalArgs),
    /// Tune lr, regularisation and node dropout on a validation holdout.
    Gridsearch(RunArgs),
    /// Write a planted-block synthetic split.
    Gensynth(SynthArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Base `key=value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train.txt and test.txt.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// variational | gae | xavier
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    embed_size: Option<usize>,
    /// Comma-separated propagation layer widths.
    #[arg(long)]
    layers: Option<String>,
    /// Learning rate (encoder learning rate for `pretrain`).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    node_dropout: Option<f64>,
    #[arg(long)]
    msg_dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs (encoder epochs for `pretrain`).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Embeddings checkpoint written by `pretrain`.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Any other configuration key, as KEY=VALUE.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Directory for metrics.json; stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 0.8)]
    intra_p: f64,
    #[arg(long, default_value_t = 0.02)]
    inter_p: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
}

impl RunArgs {
    fn resolve(&self, pretrain: bool) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        let (lr_key, epochs_key) = if pretrain { ("pretrain_lr", "pretrain_epochs") } else { ("lr", "epochs") };
        let flags: [(&str, Option<String>); 14] = [
            ("dataset", self.dataset.as_ref().map(|p| p.display().to_string())),
            ("init", self.init.clone()),
            ("embed_size", self.embed_size.map(|v| v.to_string())),
            ("layers", self.layers.clone()),
            (lr_key, self.lr.map(|v| v.to_string())),
            ("reg", self.reg.map(|v| v.to_string())),
            ("node_dropout", self.node_dropout.map(|v| v.to_string())),
            ("msg_dropout", self.msg_dropout.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            (epochs_key, self.epochs.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
            ("embeddings", self.embeddings.as_ref().map(|p| p.display().to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (key, value) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(key.trim(), value)?;
        }
        Ok(cfg.resolve()?)
    }
}

fn dataset(cfg: &RunConfig) -> anyhow::Result<DatasetSplit> {
    let dir = cfg.dataset.as_ref().context("no dataset given (use --dataset)")?;
    load_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn layer0(cfg: &RunConfig, ds: &DatasetSplit) -> anyhow::Result<DenseMatrix<f64>> {
    let z0 = match &cfg.embeddings {
        Some(path) => {
            let ve = load_checkpoint(path)
                .with_context(|| format!("reading {}", path.display()))?
                .to_embeddings::<f64>()?;
            if cfg.sample_embeddings {
                sample_embeddings(&ve, &mut stream_rng(cfg.seed, 5))?
            } else {
                export_embeddings(&ve)
            }
        }
        None => initial_embeddings(
            &ds.train,
            cfg.init_mode,
            cfg.embed_size,
            &cfg.encoder,
            cfg.sample_embeddings,
            cfg.seed,
        )?,
    };
    if z0.rows() != ds.train.n_nodes() {
        bail!(
            "embeddings have {} rows but the dataset has {} users + {} items",
            z0.rows(),
            ds.n_users(),
            ds.n_items()
        );
    }
    Ok(z0)
}

fn cmd_pretrain(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve(true)?;
    let mode = match cfg.init_mode {
        InitMode::Variational => EncoderMode::Variational,
        InitMode::Gae => EncoderMode::Deterministic,
        InitMode::Xavier => bail!("pretrain needs --init variational or --init gae"),
    };
    let ds = dataset(&cfg)?;
    let enc = EncoderConfig { mode, ..cfg.encoder.clone() };
    let out = train_vgae::<f64>(&ds.train, &enc)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("embeddings.ckpt");
    save_checkpoint(&path, &Checkpoint::from_embeddings(&out.embeddings, cfg.to_text(), enc.epochs as u64))?;
    write_pretrain_history(cfg.out.join("pretrain_history.csv"), &out.history)?;
    write_manifest(&cfg.out, "pretrain", &cfg)?;
    if let Some(last) = out.history.last() {
        println!("final loss {} (reconstruction {}, kl {})", last.total, last.reconstruction, last.kl);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve(false)?;
    let ds = dataset(&cfg)?;
    let split = ds.eval_split()?;
    let z0 = layer0(&cfg, &ds)?;
    let outcome = train(&ds.train, z0, &cfg.propagation, &cfg.train, Some(&split))?;
    let report = evaluate(&outcome.model, &build_laplacian(&ds.train), &split, cfg.train.k)?;
    fs::create_dir_all(&cfg.out)?;
    let epochs = outcome.history.len() as u64;
    save_checkpoint(cfg.out.join("model.ckpt"), &Checkpoint::from_model(&outcome.model, cfg.to_text(), epochs))?;
    write_history(cfg.out.join("history.csv"), &outcome.history)?;
    fs::write(cfg.out.join("metrics.json"), report.to_json()?)?;
    write_manifest(&cfg.out, "train", &cfg)?;
    println!("{}", report.to_json()?);
    Ok(())
}

fn cmd_evaluate(args: &EvalArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let model = ck.to_model::<f64>()?;
    let ds = load_dir(&args.dataset).with_context(|| format!("loading dataset from {}", args.dataset.display()))?;
    if (ds.n_users(), ds.n_items()) != (model.n_users, model.n_items) {
        bail!(
            "model was trained on {}x{} but the dataset is {}x{}",
            model.n_users,
            model.n_items,
            ds.n_users(),
            ds.n_items()
        );
    }
    let report = evaluate(&model, &build_laplacian(&ds.train), &ds.eval_split()?, args.k)?;
    let json = report.to_json()?;
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("metrics.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_gridsearch(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = args.resolve(false)?;
    let ds = dataset(&cfg)?;
    let validation = ds.validation_split(cfg.validation_fraction, cfg.seed)?;
    let reduced = DatasetSplit {
        train: validation.train.clone(),
        ..ds.clone()
    };
    let z0 = layer0(&cfg, &reduced)?;
    let result = grid_search(&validation.train, &z0, &cfg.propagation, &cfg.train, &cfg.grid, &validation)?;
    fs::create_dir_all(&cfg.out)?;
    let mut w = csv::Writer::from_path(cfg.out.join("grid.csv"))?;
    w.write_record(["lr", "reg", "node_dropout", "recall", "ndcg", "final_loss", "error"])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for row in &result.rows {
        w.write_record([
            row.lr.to_string(),
            row.reg_lambda.to_string(),
            row.node_dropout.to_string(),
            opt(row.recall),
            opt(row.ndcg),
            opt(row.final_loss),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut best = cfg.clone();
    best.train.lr = result.best.lr;
    best.train.reg_lambda = result.best.reg_lambda;
    best.train.node_dropout = result.best.node_dropout;
    fs::write(cfg.out.join("best.cfg"), best.to_text())?;
    write_manifest(&cfg.out, "gridsearch", &cfg)?;
    let chosen = &result.rows[result.best_index];
    println!(
        "best lr={} reg={} node_dropout={} validation recall@{}={}",
        chosen.lr,
        chosen.reg_lambda,
        chosen.node_dropout,
        cfg.train.k,
        opt(chosen.recall)
    );
    Ok(())
}

fn cmd_gensynth(args: &SynthArgs) -> anyhow::Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n_users: args.users,
        n_items: args.items,
        n_blocks: args.blocks,
        intra_p: args.intra_p,
        inter_p: args.inter_p,
        test_fraction: args.test_fraction,
        seed: args.seed,
    })?;
    write_split(&ds, &args.out)?;
    print_stats(&ds.name, &ds);
    Ok(())
}

fn print_stats(name: &str, ds: &DatasetSplit) {
    let w = name.len().max(16);
    println!("{:<w$} {:>10} {:>10} {:>14} {:>10}", "dataset", "users", "items", "interactions", "density");
    println!("{:<w$} {}", name, ds.stats());
    if ds.dropped_test > 0 {
        eprintln!("note: {} test interactions dropped (unknown user or already in train)", ds.dropped_test);
    }
}

fn cmd_stats(args: &StatsArgs) -> anyhow::Result<()> {
    let ds = load_dir(&args.dataset).with_context(|| format!("loading dataset from {}", args.dataset.display()))?;
    let name = args
        .dataset
        .file_name()
        .map_or_else(|| ds.name.clone(), |n| n.to_string_lossy().into_owned());
    print_stats(&name, &ds);
    Ok(())
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Gensynth(a) => cmd_gensynth(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 on success, 1 on a runtime failure, 2 on a usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

