//! `key=value` run configuration. File values are applied first, then flag
//! overrides; unknown keys are rejected with the nearest known key.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use styleprior::invert::InversionConfig;
use styleprior::glotrain::TrainConfig;
use styleprior::reanimate::TransferConfig;
use styleprior::stylegen::GeneratorConfig;

/// Checkpoint shipped with the repository.
pub fn reference_checkpoint() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/reference.ckpt")
}

#[derive(Debug, PartialEq, Eq)]
pub enum ConfigError {
    UnknownKey { key: String, suggestion: String },
    BadValue { key: String, value: String, expected: &'static str },
    Malformed { line: usize, text: String },
    Missing { key: &'static str },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey { key, suggestion } => {
                write!(f, "unknown config key `{key}` (did you mean `{suggestion}`?)")
            }
            ConfigError::BadValue { key, value, expected } => {
                write!(f, "config key `{key}`: expected {expected}, got `{value}`")
            }
            ConfigError::Malformed { line, text } => {
                write!(f, "config line {line}: expected key=value, got `{text}`")
            }
            ConfigError::Missing { key } => write!(f, "missing required setting `{key}`"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every recognised key.
pub const KEYS: &[&str] = &[
    "seed",
    "checkpoint",
    "out_dir",
    "strategy",
    "iterations",
    "lr",
    "record_every",
    "mask_seed",
    "sr_factor",
    "window",
    "pose_scale",
    "normalize_pose",
    "jobs",
    "count",
    "resolution",
    "data",
    "input",
    "mask",
    "source",
    "target",
    "target_factors",
    "epochs",
    "batch_size",
    "param_lr",
    "latent_lr",
    "mixing_prob",
    "latent_dim",
    "mapping_depth",
    "base_resolution",
    "channels",
    "eval_images",
    "suite_seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub inversion: InversionConfig,
    pub mask_seed: u64,
    pub sr_factor: usize,
    pub transfer: TransferConfig,
    pub jobs: usize,
    pub count: usize,
    pub resolution: usize,
    pub data: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Ground-truth identity of the target as `shape,hue,size`, enabling
    /// the fidelity report.
    pub target_factors: Option<String>,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub eval_images: usize,
    pub suite_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            checkpoint: reference_checkpoint(),
            out_dir: PathBuf::from("out"),
            inversion: InversionConfig::default(),
            mask_seed: 0,
            sr_factor: 4,
            transfer: TransferConfig::default(),
            jobs: 1,
            count: 500,
            resolution: 32,
            data: None,
            input: None,
            mask: None,
            source: None,
            target: None,
            target_factors: None,
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            eval_images: 20,
            suite_seed: 1234,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

/// Known key with the smallest edit distance to `key`.
pub fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .copied()
        .min_by_key(|k| strsim::levenshtein(k, key))
        .expect("key table is non-empty")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        const INT: &str = "a non-negative integer";
        const REAL: &str = "a real number";
        let path = || Some(PathBuf::from(value.trim()));
        match key {
            "seed" => {
                self.seed = parse(key, value, INT)?;
                self.train.seed = self.seed;
            }
            "checkpoint" => self.checkpoint = PathBuf::from(value.trim()),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "strategy" => {
                self.inversion.strategy = parse(key, value, "one of noise, global, per-layer")?
            }
            "iterations" => self.inversion.iterations = parse(key, value, INT)?,
            "lr" => self.inversion.lr = parse(key, value, REAL)?,
            "record_every" => self.inversion.record_every = parse(key, value, INT)?,
            "mask_seed" => self.mask_seed = parse(key, value, INT)?,
            "sr_factor" => self.sr_factor = parse(key, value, INT)?,
            "window" => self.transfer.window = parse(key, value, INT)?,
            "pose_scale" => self.transfer.pose_scale = parse(key, value, REAL)?,
            "normalize_pose" => self.transfer.normalize = parse(key, value, "true or false")?,
            "jobs" => {
                self.jobs = parse(key, value, INT)?;
                self.train.jobs = self.jobs;
            }
            "count" => self.count = parse(key, value, INT)?,
            "resolution" => self.resolution = parse(key, value, INT)?,
            "data" => self.data = path(),
            "input" => self.input = path(),
            "mask" => self.mask = path(),
            "source" => self.source = path(),
            "target" => self.target = path(),
            "target_factors" => self.target_factors = Some(value.trim().to_string()),
            "epochs" => self.train.epochs = parse(key, value, INT)?,
            "batch_size" => self.train.batch_size = parse(key, value, INT)?,
            "param_lr" => self.train.param_lr = parse(key, value, REAL)?,
            "latent_lr" => self.train.latent_lr = parse(key, value, REAL)?,
            "mixing_prob" => self.train.mixing_prob = parse(key, value, REAL)?,
            "latent_dim" => self.generator.latent_dim = parse(key, value, INT)?,
            "mapping_depth" => self.generator.mapping_depth = parse(key, value, INT)?,
            "base_resolution" => self.generator.base_resolution = parse(key, value, INT)?,
            "channels" => {
                self.generator.channels = value
                    .split(',')
                    .map(|c| parse(key, c, "a comma-separated list of integers"))
                    .collect::<Result<_, _>>()?
            }
            "eval_images" => self.eval_images = parse(key, value, INT)?,
            "suite_seed" => self.suite_seed = parse(key, value, INT)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                    suggestion: nearest_key(other).to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the overrides in order.
    pub fn build(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file_text {
            cfg.apply_text(text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn require<'a>(&self, key: &'static str, value: &'a Option<PathBuf>) -> Result<&'a Path, ConfigError> {
        value.as_deref().ok_or(ConfigError::Missing { key })
    }
}
