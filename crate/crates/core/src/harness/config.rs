//! Experiment configuration documents (TOML, or JSON by file extension).
//!
//! ```toml
//! [potential]
//! family = "quadratic"
//! precision = [2.0, 1.0, 1.0, 2.0]
//! mean = [1.0, -1.0]
//!
//! [run]
//! schedule = "corollary"
//! particles = 1024
//! iterations = 2000
//! seed = 7
//!
//! [reference]
//! kind = "analytic"
//!
//! [sweep]
//! particles = [64, 256, 1024, 4096]
//! replications = 16
//!
//! [output]
//! dir = "out/gaussian"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::RunConfig;
use crate::error::{Error, Result};
use crate::oracle::{FixedPointOptions, VbarMethod, DEFAULT_GRID_POINTS};
use crate::potential::PotentialConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Closed-form Gaussian solution when the potential is quadratic, grid oracle otherwise.
    #[default]
    Auto,
    Analytic,
    Oracle,
    None,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default)]
    pub kind: ReferenceKind,
    /// Saved oracle document; computed on the fly when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub grid_points: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub method: VbarMethod,
    pub w2_levels: usize,
    /// Also solve from point-mass and uniform starts and compare.
    pub check_uniqueness: bool,
    /// Number of reference samples drawn by `check`.
    pub samples: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let fp = FixedPointOptions::default();
        Self {
            grid_points: DEFAULT_GRID_POINTS,
            tol: fp.tol,
            max_iter: fp.max_iter,
            damping: fp.damping,
            method: fp.method,
            w2_levels: fp.w2_levels,
            check_uniqueness: false,
            samples: 100_000,
        }
    }
}

impl OracleConfig {
    pub fn fixed_point_options(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            damping: self.damping,
            method: self.method,
            w2_levels: self.w2_levels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub particles: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

fn default_replications() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("pavi-out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses JSON for `.json` files and TOML otherwise. Relative paths in the
    /// document are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(p) = &cfg.reference.path {
            if p.is_relative() {
                cfg.reference.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }
}
