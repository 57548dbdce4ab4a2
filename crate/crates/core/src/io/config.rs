//! Flat `key=value` run configuration, reproducibility manifests and the
//! training-history CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ngcf::{InitMode, PropagationConfig};
use crate::trainer::{EpochRecord, HyperGrid, TrainConfig};
use crate::vgae::{ElboTerms, EncoderConfig, FeatureKind};

/// Everything one pipeline run depends on. A single `seed` drives both the
/// encoder and the recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    /// Pre-trained embeddings checkpoint used instead of running the encoder.
    pub embeddings: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub init_mode: InitMode,
    pub embed_size: usize,
    /// Draw one reparameterised sample instead of exporting the means.
    pub sample_embeddings: bool,
    pub encoder: EncoderConfig,
    pub propagation: PropagationConfig,
    pub train: TrainConfig,
    pub grid: HyperGrid,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            embeddings: None,
            out: PathBuf::from("runs/default"),
            seed: 0,
            init_mode: InitMode::Variational,
            embed_size: 64,
            sample_embeddings: false,
            encoder: EncoderConfig::default(),
            propagation: PropagationConfig::default(),
            train: TrainConfig::default(),
            grid: HyperGrid {
                lrs: vec![5e-4, 1e-4, 5e-5, 1e-5, 5e-6],
                regs: vec![5e-4, 1e-5, 1e-6],
                node_dropouts: vec![0.1, 0.2],
            },
            validation_fraction: 0.1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "embeddings",
        "out",
        "seed",
        "init",
        "embed_size",
        "sample_embeddings",
        "layers",
        "leaky_slope",
        "lr",
        "reg",
        "node_dropout",
        "msg_dropout",
        "batch_size",
        "epochs",
        "k",
        "eval_every",
        "patience",
        "negatives",
        "pretrain_epochs",
        "pretrain_lr",
        "encoder_hidden",
        "encoder_features",
        "kl_weight",
        "pretrain_neg_ratio",
        "full_pair_limit",
        "grid_lr",
        "grid_reg",
        "grid_node_dropout",
        "validation_fraction",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "embeddings" => self.embeddings = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "init" => self.init_mode = value.parse()?,
            "embed_size" => self.embed_size = parse(key, value)?,
            "sample_embeddings" => self.sample_embeddings = parse(key, value)?,
            "layers" => self.propagation.layer_dims = parse_list(key, value)?,
            "leaky_slope" => {
                let s: f64 = parse(key, value)?;
                self.propagation.leaky_slope = s;
                self.encoder.leaky_slope = s;
            }
            "lr" => self.train.lr = parse(key, value)?,
            "reg" => self.train.reg_lambda = parse(key, value)?,
            "node_dropout" => self.train.node_dropout = parse(key, value)?,
            "msg_dropout" => self.train.msg_dropout = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "k" => self.train.k = parse(key, value)?,
            "eval_every" => self.train.eval_every = parse(key, value)?,
            "patience" => {
                self.train.patience = match value {
                    "" | "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "negatives" => self.train.negatives_per_positive = parse(key, value)?,
            "pretrain_epochs" => self.encoder.epochs = parse(key, value)?,
            "pretrain_lr" => self.encoder.learning_rate = parse(key, value)?,
            "encoder_hidden" => self.encoder.hidden_dims = parse_list(key, value)?,
            "encoder_features" => self.encoder.features = value.parse::<FeatureKind>()?,
            "kl_weight" => self.encoder.kl_weight = parse(key, value)?,
            "pretrain_neg_ratio" => self.encoder.negative_sample_ratio = parse(key, value)?,
            "full_pair_limit" => self.encoder.full_pair_limit = parse(key, value)?,
            "grid_lr" => self.grid.lrs = parse_list(key, value)?,
            "grid_reg" => self.grid.regs = parse_list(key, value)?,
            "grid_node_dropout" => self.grid.node_dropouts = parse_list(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are rejected.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                message: format!("expected key=value, found {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                line: k + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Copies the shared seed into the component configs and validates them.
    pub fn resolve(mut self) -> Result<Self> {
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
        self.encoder.latent_dim = self.embed_size;
        self.propagation.init_mode = self.init_mode;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_size == 0 {
            return Err(Error::Config("embed size must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
        }
        self.encoder.validate()?;
        self.propagation.validate()?;
        self.train.validate()
    }

    /// Canonical `key=value` text, one line per key in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &key in Self::KEYS {
            let value = match key {
                "dataset" => self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "embeddings" => self.embeddings.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "out" => self.out.display().to_string(),
                "seed" => self.seed.to_string(),
                "init" => self.init_mode.to_string(),
                "embed_size" => self.embed_size.to_string(),
                "sample_embeddings" => self.sample_embeddings.to_string(),
                "layers" => join(&self.propagation.layer_dims),
                "leaky_slope" => self.propagation.leaky_slope.to_string(),
                "lr" => self.train.lr.to_string(),
                "reg" => self.train.reg_lambda.to_string(),
                "node_dropout" => self.train.node_dropout.to_string(),
                "msg_dropout" => self.train.msg_dropout.to_string(),
                "batch_size" => self.train.batch_size.to_string(),
                "epochs" => self.train.epochs.to_string(),
                "k" => self.train.k.to_string(),
                "eval_every" => self.train.eval_every.to_string(),
                "patience" => self.train.patience.map_or_else(|| "none".into(), |p| p.to_string()),
                "negatives" => self.train.negatives_per_positive.to_string(),
                "pretrain_epochs" => self.encoder.epochs.to_string(),
                "pretrain_lr" => self.encoder.learning_rate.to_string(),
                "encoder_hidden" => join(&self.encoder.hidden_dims),
                "encoder_features" => self.encoder.features.to_string(),
                "kl_weight" => self.encoder.kl_weight.to_string(),
                "pretrain_neg_ratio" => self.encoder.negative_sample_ratio.to_string(),
                "full_pair_limit" => self.encoder.full_pair_limit.to_string(),
                "grid_lr" => join(&self.grid.lrs),
                "grid_reg" => join(&self.grid.regs),
                "grid_node_dropout" => join(&self.grid.node_dropouts),
                "validation_fraction" => self.validation_fraction.to_string(),
                _ => unreachable!("key list and serialiser out of sync"),
            };
            let _ = writeln!(out, "{key}={value}");
        }
        out
    }
}

/// Writes `dir/manifest.txt`: metadata as comments followed by the full
/// configuration, so the file can be fed back with `--config`.
pub fn write_manifest(dir: impl AsRef<Path>, command: &str, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut text = String::new();
    let _ = writeln!(text, "# command={command}");
    let _ = writeln!(text, "# {}={}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "# scalar=f64 threads=1");
    text.push_str(&cfg.to_text());
    let path = dir.join("manifest.txt");
    fs::write(&path, text)?;
    Ok(path)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `epoch,loss,recall,ndcg,seconds`; metrics are empty on epochs without an
/// evaluation.
pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss", "recall", "ndcg", "seconds"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.loss.to_string(),
            opt(h.recall),
            opt(h.ndcg),
            h.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pretrain_history(path: impl AsRef<Path>, history: &[ElboTerms<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "total", "reconstruction", "kl"])?;
    for (epoch, h) in history.iter().enumerate() {
        w.write_record([
            epoch.to_string(),
            h.total.to_string(),
            h.reconstruction.to_string(),
            h.kl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("layers", "32,16").unwrap();
        cfg.set("patience", "10").unwrap();
        cfg.set("dataset", "data/gowalla").unwrap();
        cfg.set("init", "gae").unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::from_text(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_text("lr=0.1\nlearning_rate=2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(RunConfig::from_text("epochs=many").is_err());
        assert!(RunConfig::from_text("init=svd").is_err());
        assert!(RunConfig::from_text("no equals sign").is_err());
        assert!(RunConfig::from_text("node_dropout=1.5").unwrap().resolve().is_err());
    }

    #[test]
    fn resolve_shares_the_seed() {
        let cfg = RunConfig::from_text("# comment\nseed=42\nembed_size=16\n").unwrap().resolve().unwrap();
        assert_eq!((cfg.encoder.seed, cfg.train.seed, cfg.encoder.latent_dim), (42, 42, 16));
    }

    #[test]
    fn manifest_reloads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_text("epochs=3\nlr=0.002").unwrap();
        let path = write_manifest(dir.path(), "train", &cfg).unwrap();
        assert_eq!(RunConfig::from_file(path).unwrap(), cfg);
    }

    #[test]
    fn history_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let rows = [
            EpochRecord { epoch: 1, loss: 0.5, recall: None, ndcg: None, seconds: 0.1, z0_norm: 1.0 },
            EpochRecord { epoch: 2, loss: 0.25, recall: Some(0.1), ndcg: Some(0.2), seconds: 0.1, z0_norm: 1.0 },
        ];
        write_history(&path, &rows).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), ["epoch,loss,recall,ndcg,seconds", "1,0.5,,,0.1", "2,0.25,0.1,0.2,0.1"]);
    }
}
