//! `key=value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key must be known. Command-line flags are applied on top with
//! [`RunConfig::set`], and `GCN_SEED` supplies the seed when neither the file
//! nor the command line does.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{DEFAULT_PATCH_SIZE, DEFAULT_STRIDE};
use crate::error::{Error, Result};
use crate::graph::Connectivity;
use crate::model::Architecture;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "GCN_SEED";
pub const DEFAULT_CHECKPOINT: &str = "gcnseg.ckpt";

pub const KEYS: &[&str] = &[
    "learning_rate",
    "epochs",
    "batch_size",
    "seed",
    "checkpoint_path",
    "log_every",
    "conv_channels",
    "gcn_dims",
    "connectivity",
    "data",
    "eval_data",
    "split_ratio",
    "patch_size",
    "stride",
    "cheb_order",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` until set by file or flag; see [`RunConfig::resolved_seed`].
    pub seed: Option<u64>,
    pub checkpoint_path: PathBuf,
    pub log_every: usize,
    pub conv_channels: Vec<usize>,
    pub gcn_dims: Vec<usize>,
    pub connectivity: Connectivity,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    /// Spatial train/test split of `data`; ignored when `eval_data` is set.
    pub split_ratio: Option<f64>,
    pub patch_size: usize,
    pub stride: usize,
    pub cheb_order: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let arch = Architecture::default();
        Self {
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: None,
            checkpoint_path: PathBuf::from(DEFAULT_CHECKPOINT),
            log_every: train.log_every,
            conv_channels: arch.conv_channels,
            gcn_dims: arch.gcn_dims,
            connectivity: arch.connectivity,
            data: None,
            eval_data: None,
            split_ratio: None,
            patch_size: DEFAULT_PATCH_SIZE,
            stride: DEFAULT_STRIDE,
            cheb_order: 8,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = Some(parse(key, value)?),
            "checkpoint_path" => self.checkpoint_path = PathBuf::from(value),
            "log_every" => self.log_every = parse(key, value)?,
            "conv_channels" => self.conv_channels = parse_list(key, value)?,
            "gcn_dims" => self.gcn_dims = parse_list(key, value)?,
            "connectivity" => {
                self.connectivity = value
                    .parse()
                    .map_err(|e| Error::Config(format!("connectivity: {e}")))?
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "eval_data" => self.eval_data = Some(PathBuf::from(value)),
            "split_ratio" => self.split_ratio = Some(parse(key, value)?),
            "patch_size" => self.patch_size = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "cheb_order" => self.cheb_order = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; known keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Explicit seed, else `GCN_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        self.resolve_seed_from(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn resolve_seed_from(&self, env: Option<&str>) -> Result<u64> {
        match (self.seed, env) {
            (Some(s), _) => Ok(s),
            (None, Some(v)) => parse(SEED_ENV, v.trim()),
            (None, None) => Ok(0),
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            in_channels: 3,
            conv_channels: self.conv_channels.clone(),
            gcn_dims: self.gcn_dims.clone(),
            height: self.patch_size,
            width: self.patch_size,
            connectivity: self.connectivity,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.resolved_seed()?,
            checkpoint_path: Some(self.checkpoint_path.clone()),
            log_every: self.log_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration back to `key=value` lines.
    pub fn to_config_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let mut out = vec![
            format!("learning_rate={}", self.learning_rate),
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
        ];
        if let Some(s) = self.seed {
            out.push(format!("seed={s}"));
        }
        out.push(format!("checkpoint_path={}", self.checkpoint_path.display()));
        out.push(format!("log_every={}", self.log_every));
        out.push(format!("conv_channels={}", list(&self.conv_channels)));
        out.push(format!("gcn_dims={}", list(&self.gcn_dims)));
        out.push(format!("connectivity={}", self.connectivity));
        if let Some(p) = &self.data {
            out.push(format!("data={}", p.display()));
        }
        if let Some(p) = &self.eval_data {
            out.push(format!("eval_data={}", p.display()));
        }
        if let Some(r) = self.split_ratio {
            out.push(format!("split_ratio={r}"));
        }
        out.push(format!("patch_size={}", self.patch_size));
        out.push(format!("stride={}", self.stride));
        out.push(format!("cheb_order={}", self.cheb_order));
        out.join("\n") + "\n"
    }
}
