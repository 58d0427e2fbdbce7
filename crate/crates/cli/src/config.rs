//! Flat `key = value` run configuration.
//!
//! Values come from defaults, then an optional config file, then
//! `--key value` pairs on the command line, each layer overriding the last.
//! Relative paths in a file are resolved against the file's directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctxppi_core::analysis::RandomWalkConfig;
use ctxppi_core::finetune::MlpConfig;
use ctxppi_core::kg::{ConstructOptions, DegThresholds};
use ctxppi_core::model::ModelConfig;
use ctxppi_core::pretrain::{SplitRatios, TrainConfig};
use thiserror::Error;

use crate::synth::SyntheticSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("a seed is required (set `seed` in the config or pass --seed)")]
    MissingSeed,
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,

    pub ppi: Option<PathBuf>,
    pub deg: Option<PathBuf>,
    pub lr_table: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub thresholds: DegThresholds,
    pub lr_threshold: f64,
    pub min_nodes: usize,

    pub synth: SyntheticSpec,

    /// Graph bundle; defaults to `<out>/graph`.
    pub graph: Option<PathBuf>,
    /// Risk labels; defaults to `<graph>/labels.tsv`.
    pub labels: Option<PathBuf>,
    /// Pretrained embeddings; defaults to `<out>/pretrain`.
    pub embeddings: Option<PathBuf>,

    pub latent_dim: usize,
    pub protein_layers: usize,
    pub attention_heads: usize,
    pub metagraph_layers: usize,

    pub epochs: usize,
    pub lr: f64,
    pub ratios: SplitRatios,
    pub negative_ratio: f64,
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,

    pub mlp_hidden: usize,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
    pub test_fraction: f64,

    /// Genes for per-gene similarity maps; empty means the labelled
    /// positives.
    pub genes: Vec<String>,

    pub rw_walks: usize,
    pub rw_length: usize,
    pub rw_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let mlp = MlpConfig::default();
        let rw = RandomWalkConfig::default();
        let build = ConstructOptions::default();
        Self {
            seed: None,
            out: PathBuf::from("out"),
            threads: 0,
            ppi: None,
            deg: None,
            lr_table: None,
            hierarchy: None,
            thresholds: build.thresholds,
            lr_threshold: build.lr_threshold,
            min_nodes: build.min_nodes,
            synth: SyntheticSpec::default(),
            graph: None,
            labels: None,
            embeddings: None,
            latent_dim: model.latent_dim,
            protein_layers: model.n_protein_layers,
            attention_heads: model.n_attention_heads,
            metagraph_layers: model.n_metagraph_layers,
            epochs: train.epochs,
            lr: train.lr,
            ratios: train.ratios,
            negative_ratio: train.negative_ratio,
            checkpoint_every: 10,
            resume: None,
            mlp_hidden: mlp.hidden,
            mlp_epochs: mlp.epochs,
            mlp_lr: mlp.lr,
            test_fraction: mlp.test_fraction,
            genes: Vec::new(),
            rw_walks: rw.walks_per_node,
            rw_length: rw.walk_length,
            rw_window: rw.window,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

fn path(value: &str, base: Option<&Path>) -> PathBuf {
    let p = PathBuf::from(value);
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

fn opt_path(value: &str, base: Option<&Path>) -> Option<PathBuf> {
    (!value.is_empty()).then(|| path(value, base))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "out",
        "threads",
        "ppi",
        "deg",
        "lr_table",
        "hierarchy",
        "up_fc",
        "down_fc",
        "max_adj_p",
        "min_pct_expressed",
        "lr_threshold",
        "min_nodes",
        "n_proteins",
        "n_contexts",
        "n_blocks",
        "p_intra",
        "p_inter",
        "risk_block",
        "n_positive",
        "n_negative",
        "n_celltypes",
        "active_fraction",
        "graph",
        "labels",
        "embeddings",
        "latent_dim",
        "protein_layers",
        "attention_heads",
        "metagraph_layers",
        "epochs",
        "lr",
        "train_ratio",
        "valid_ratio",
        "test_ratio",
        "negative_ratio",
        "checkpoint_every",
        "resume",
        "mlp_hidden",
        "mlp_epochs",
        "mlp_lr",
        "test_fraction",
        "genes",
        "rw_walks",
        "rw_length",
        "rw_window",
    ];

    /// Sets one key. `base` resolves relative paths.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = Some(parse(key, v)?),
            "out" => self.out = path(v, base),
            "threads" => self.threads = parse(key, v)?,
            "ppi" => self.ppi = opt_path(v, base),
            "deg" => self.deg = opt_path(v, base),
            "lr_table" => self.lr_table = opt_path(v, base),
            "hierarchy" => self.hierarchy = opt_path(v, base),
            "up_fc" => self.thresholds.up_fc = parse(key, v)?,
            "down_fc" => self.thresholds.down_fc = parse(key, v)?,
            "max_adj_p" => self.thresholds.max_adj_p = parse(key, v)?,
            "min_pct_expressed" => self.thresholds.min_pct_expressed = parse(key, v)?,
            "lr_threshold" => self.lr_threshold = parse(key, v)?,
            "min_nodes" => self.min_nodes = parse(key, v)?,
            "n_proteins" => self.synth.n_proteins = parse(key, v)?,
            "n_contexts" => self.synth.n_contexts = parse(key, v)?,
            "n_blocks" => self.synth.n_blocks = parse(key, v)?,
            "p_intra" => self.synth.p_intra = parse(key, v)?,
            "p_inter" => self.synth.p_inter = parse(key, v)?,
            "risk_block" => self.synth.risk_block = parse(key, v)?,
            "n_positive" => self.synth.n_positive = parse(key, v)?,
            "n_negative" => self.synth.n_negative = parse(key, v)?,
            "n_celltypes" => self.synth.n_celltypes = parse(key, v)?,
            "active_fraction" => self.synth.active_fraction = parse(key, v)?,
            "graph" => self.graph = opt_path(v, base),
            "labels" => self.labels = opt_path(v, base),
            "embeddings" => self.embeddings = opt_path(v, base),
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "protein_layers" => self.protein_layers = parse(key, v)?,
            "attention_heads" => self.attention_heads = parse(key, v)?,
            "metagraph_layers" => self.metagraph_layers = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "train_ratio" => self.ratios.train = parse(key, v)?,
            "valid_ratio" => self.ratios.valid = parse(key, v)?,
            "test_ratio" => self.ratios.test = parse(key, v)?,
            "negative_ratio" => self.negative_ratio = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "resume" => self.resume = opt_path(v, base),
            "mlp_hidden" => self.mlp_hidden = parse(key, v)?,
            "mlp_epochs" => self.mlp_epochs = parse(key, v)?,
            "mlp_lr" => self.mlp_lr = parse(key, v)?,
            "test_fraction" => self.test_fraction = parse(key, v)?,
            "genes" => {
                self.genes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|g| !g.is_empty())
                    .map(String::from)
                    .collect()
            }
            "rw_walks" => self.rw_walks = parse(key, v)?,
            "rw_length" => self.rw_length = parse(key, v)?,
            "rw_window" => self.rw_window = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Current value of `key` in config-file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.map(|s| s.to_string()).unwrap_or_default(),
            "out" => self.out.display().to_string(),
            "threads" => self.threads.to_string(),
            "ppi" => show_path(&self.ppi),
            "deg" => show_path(&self.deg),
            "lr_table" => show_path(&self.lr_table),
            "hierarchy" => show_path(&self.hierarchy),
            "up_fc" => self.thresholds.up_fc.to_string(),
            "down_fc" => self.thresholds.down_fc.to_string(),
            "max_adj_p" => self.thresholds.max_adj_p.to_string(),
            "min_pct_expressed" => self.thresholds.min_pct_expressed.to_string(),
            "lr_threshold" => self.lr_threshold.to_string(),
            "min_nodes" => self.min_nodes.to_string(),
            "n_proteins" => self.synth.n_proteins.to_string(),
            "n_contexts" => self.synth.n_contexts.to_string(),
            "n_blocks" => self.synth.n_blocks.to_string(),
            "p_intra" => self.synth.p_intra.to_string(),
            "p_inter" => self.synth.p_inter.to_string(),
            "risk_block" => self.synth.risk_block.to_string(),
            "n_positive" => self.synth.n_positive.to_string(),
            "n_negative" => self.synth.n_negative.to_string(),
            "n_celltypes" => self.synth.n_celltypes.to_string(),
            "active_fraction" => self.synth.active_fraction.to_string(),
            "graph" => show_path(&self.graph),
            "labels" => show_path(&self.labels),
            "embeddings" => show_path(&self.embeddings),
            "latent_dim" => self.latent_dim.to_string(),
            "protein_layers" => self.protein_layers.to_string(),
            "attention_heads" => self.attention_heads.to_string(),
            "metagraph_layers" => self.metagraph_layers.to_string(),
            "epochs" => self.epochs.to_string(),
            "lr" => self.lr.to_string(),
            "train_ratio" => self.ratios.train.to_string(),
            "valid_ratio" => self.ratios.valid.to_string(),
            "test_ratio" => self.ratios.test.to_string(),
            "negative_ratio" => self.negative_ratio.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "resume" => show_path(&self.resume),
            "mlp_hidden" => self.mlp_hidden.to_string(),
            "mlp_epochs" => self.mlp_epochs.to_string(),
            "mlp_lr" => self.mlp_lr.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "genes" => self.genes.join(","),
            "rw_walks" => self.rw_walks.to_string(),
            "rw_length" => self.rw_length.to_string(),
            "rw_window" => self.rw_window.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn apply_text(
        &mut self,
        text: &str,
        source_name: &str,
        base: Option<&Path>,
    ) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            self.set(k.trim(), v, base)
                .map_err(|e| ConfigError::Parse {
                    source_name: source_name.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, file: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(file).map_err(|e| ConfigError::Io {
            path: file.display().to_string(),
            message: e.to_string(),
        })?;
        let base = file.parent().filter(|p| !p.as_os_str().is_empty());
        self.apply_text(&text, &file.display().to_string(), base)
    }

    /// Applies `--key value` or `--key=value` pairs.
    pub fn apply_args<S: AsRef<str>>(&mut self, args: &[S]) -> Result<(), ConfigError> {
        let mut it = args.iter().map(AsRef::as_ref);
        while let Some(arg) = it.next() {
            let flag = arg.strip_prefix("--").ok_or_else(|| {
                ConfigError::Invalid(format!("expected a --key flag, found {arg:?}"))
            })?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| ConfigError::Invalid(format!("--{flag} needs a value")))?;
                    (flag.to_string(), v.to_string())
                }
            };
            self.set(&key.replace('-', "_"), &value, None)?;
        }
        Ok(())
    }

    /// Checks cross-field invariants.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed.is_none() {
            return Err(ConfigError::MissingSeed);
        }
        self.ratios
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(ConfigError::Invalid(format!(
                "test_fraction {} must lie in [0, 1)",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    /// `key = value` lines for every key.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).unwrap_or_default());
        }
        s
    }

    pub fn graph_dir(&self) -> PathBuf {
        self.graph.clone().unwrap_or_else(|| self.out.join("graph"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels
            .clone()
            .unwrap_or_else(|| self.graph_dir().join("labels.tsv"))
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.out.join("pretrain"))
    }

    pub fn construct_options(&self) -> ConstructOptions {
        ConstructOptions {
            thresholds: self.thresholds,
            lr_threshold: self.lr_threshold,
            min_nodes: self.min_nodes,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            latent_dim: self.latent_dim,
            n_protein_layers: self.protein_layers,
            n_attention_heads: self.attention_heads,
            n_metagraph_layers: self.metagraph_layers,
            seed: self.seed(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            ratios: self.ratios,
            negative_ratio: self.negative_ratio,
            seed: self.seed(),
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            hidden: self.mlp_hidden,
            epochs: self.mlp_epochs,
            lr: self.mlp_lr,
            test_fraction: self.test_fraction,
            seed: self.seed(),
        }
    }

    pub fn random_walk_config(&self) -> RandomWalkConfig {
        RandomWalkConfig {
            dim: self.latent_dim,
            walks_per_node: self.rw_walks,
            walk_length: self.rw_length,
            window: self.rw_window,
            seed: self.seed(),
            ..RandomWalkConfig::default()
        }
    }

    /// Keys that shape a pretraining run. `epochs` is left out so a run
    /// can be resumed with a larger budget.
    pub const TRAINING_KEYS: &'static [&'static str] = &[
        "seed",
        "latent_dim",
        "protein_layers",
        "attention_heads",
        "metagraph_layers",
        "lr",
        "train_ratio",
        "valid_ratio",
        "test_ratio",
        "negative_ratio",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let mut c = RunConfig::default();
        c.seed = Some(7);
        c.genes = vec!["A".into(), "B".into()];
        c.ppi = Some("x/ppi.tsv".into());
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "dump", None).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn getters_cover_keys() {
        let c = RunConfig::default();
        for k in RunConfig::KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
        assert!(c.get("nope").is_none());
    }
}
