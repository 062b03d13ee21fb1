//! Run configuration: defaults, then a `key = value` file, then `CCRANK_*`
//! environment variables, then command-line flags.
//!
//! File format: one `key = value` per line; blank lines and lines starting
//! with `#` are ignored. Every key listed in [`KEYS`] may also be set through
//! the environment as `CCRANK_<KEY>` in upper case, e.g. `CCRANK_DIM=32`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ccrank_core::eval::{PoolConfig, PoolMode};
use ccrank_core::train::TrainConfig;
use ccrank_core::{ModelConfig, SplitOptions};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "CCRANK_";

pub const KEYS: &[&str] = &[
    "dim",
    "heads",
    "layers",
    "history_len",
    "ffn_mult",
    "dropout",
    "use_history_attn",
    "use_temporal_bias",
    "use_spatial_bias",
    "lr",
    "batch_size",
    "epochs",
    "negatives",
    "label_smoothing",
    "explore_weight",
    "weight_decay",
    "patience",
    "add_one_smoothing",
    "val_pool_size",
    "pool",
    "pool_size",
    "min_count",
    "holdout",
    "seed",
    "data",
    "cache",
    "checkpoint_dir",
    "report_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `num_pois` is filled in from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pool: PoolConfig,
    pub split: SplitOptions,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pool: PoolConfig::default(),
            split: SplitOptions::default(),
            seed: 0,
            data: None,
            cache: None,
            checkpoint_dir: PathBuf::from("checkpoints"),
            report_dir: PathBuf::from("reports"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any) and the process environment.
    pub fn load(file: Option<&Path>) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            if !path.exists() {
                return Err(CliError::MissingInput(path.to_path_buf()));
            }
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::Usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> CliResult<()> {
        for (name, value) in vars {
            if let Some(key) = name.strip_prefix(ENV_PREFIX) {
                let key = key.to_ascii_lowercase();
                if KEYS.contains(&key.as_str()) {
                    self.set(&key, &value)
                        .map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
                }
            }
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "dim" => m.dim = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "layers" => m.layers = parse(key, v)?,
            "history_len" => m.history_len = parse(key, v)?,
            "ffn_mult" => m.ffn_mult = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "use_history_attn" => m.use_history_attn = parse(key, v)?,
            "use_temporal_bias" => m.use_temporal_bias = parse(key, v)?,
            "use_spatial_bias" => m.use_spatial_bias = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.max_epochs = parse(key, v)?,
            "negatives" => t.negatives = parse(key, v)?,
            "label_smoothing" => t.label_smoothing = parse(key, v)?,
            "explore_weight" => t.explore_weight = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "add_one_smoothing" => t.add_one_smoothing = parse(key, v)?,
            "val_pool_size" => t.val_pool_size = parse(key, v)?,
            "pool" => {
                self.pool.mode = v
                    .parse::<PoolMode>()
                    .map_err(|_| CliError::Usage(format!("pool must be sampled or full, got {v:?}")))?
            }
            "pool_size" => self.pool.size = parse(key, v)?,
            "min_count" => self.split.min_count = parse(key, v)?,
            "holdout" => self.split.holdout = parse(key, v)?,
            "seed" => self.set_seed(parse(key, v)?),
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "cache" => self.cache = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(v),
            "report_dir" => self.report_dir = PathBuf::from(v),
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// The run seed drives initialization, sampling and evaluation pools.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.pool.seed = seed;
    }

    /// Checks everything that can be checked without the dataset.
    pub fn validate(&self) -> CliResult<()> {
        let model = ModelConfig {
            num_pois: self.model.num_pois.max(1),
            ..self.model.clone()
        };
        let config_error = |e: ccrank_core::Error| CliError::Core {
            context: "config".into(),
            source: e,
        };
        model.validate().map_err(config_error)?;
        self.train.validate().map_err(config_error)?;
        if self.pool.mode == PoolMode::Sampled && self.pool.size < 2 {
            return Err(CliError::Usage("pool_size must be at least 2".into()));
        }
        Ok(())
    }

    /// Effective configuration in the same format [`RunConfig::apply_text`]
    /// reads.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dim", m.dim.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("history_len", m.history_len.to_string());
        kv("ffn_mult", m.ffn_mult.to_string());
        kv("dropout", m.dropout.to_string());
        kv("use_history_attn", m.use_history_attn.to_string());
        kv("use_temporal_bias", m.use_temporal_bias.to_string());
        kv("use_spatial_bias", m.use_spatial_bias.to_string());
        kv("lr", t.lr.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.max_epochs.to_string());
        kv("negatives", t.negatives.to_string());
        kv("label_smoothing", t.label_smoothing.to_string());
        kv("explore_weight", t.explore_weight.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("patience", t.patience.to_string());
        kv("add_one_smoothing", t.add_one_smoothing.to_string());
        kv("val_pool_size", t.val_pool_size.to_string());
        kv("pool", self.pool.mode.to_string());
        kv("pool_size", self.pool.size.to_string());
        kv("min_count", self.split.min_count.to_string());
        kv("holdout", self.split.holdout.to_string());
        kv("seed", self.seed.to_string());
        kv("data", path(&self.data));
        kv("cache", path(&self.cache));
        kv("checkpoint_dir", self.checkpoint_dir.display().to_string());
        kv("report_dir", self.report_dir.display().to_string());
        s
    }

    pub fn write_echo(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_text())
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
    }
}
