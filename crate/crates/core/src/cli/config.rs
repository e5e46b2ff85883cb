use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SchemaConfig;
use crate::error::{Error, Result};
use crate::lasso::{DEFAULT_GRID_RATIO, DEFAULT_GRID_SIZE};
use crate::nested_cv::{CvConfig, GridParams, Stratification};

fn default_folds() -> usize {
    10
}
fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}
fn default_grid_ratio() -> f64 {
    DEFAULT_GRID_RATIO
}
fn default_threshold() -> f64 {
    0.5
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Contents of a run configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_folds")]
    pub n_outer: usize,
    #[serde(default = "default_folds")]
    pub k_inner: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_grid_ratio")]
    pub grid_ratio: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub strategy: Stratification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_subset: Option<Vec<String>>,
    pub schema: SchemaConfig,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, schema: SchemaConfig) -> Self {
        RunConfig {
            input: input.into(),
            output_dir: default_output_dir(),
            seed: 0,
            threads: 0,
            n_outer: default_folds(),
            k_inner: default_folds(),
            grid_size: default_grid_size(),
            grid_ratio: default_grid_ratio(),
            threshold: default_threshold(),
            strategy: Stratification::default(),
            manual_subset: None,
            schema,
        }
    }

    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_outer < 2 {
            return bad("n_outer must be at least 2");
        }
        if self.k_inner < 2 {
            return bad("k_inner must be at least 2");
        }
        if self.grid_size < 2 {
            return bad("grid_size must be at least 2");
        }
        if !(self.grid_ratio > 0.0 && self.grid_ratio < 1.0) {
            return bad("grid_ratio must lie in (0, 1)");
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn cv_config(&self) -> CvConfig {
        CvConfig {
            n_outer: self.n_outer,
            k_inner: self.k_inner,
            grid: GridParams {
                size: self.grid_size,
                ratio: self.grid_ratio,
            },
            strategy: self.strategy,
            seed: self.seed,
        }
    }
}
