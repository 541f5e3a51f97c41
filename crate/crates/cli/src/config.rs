use std::path::{Path, PathBuf};

use clap::ValueEnum;
use lds_core::acq::Cone;
use lds_core::gen::GenSpec;
use lds_core::learn::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Proper,
    Split,
    Improper,
    Linreg,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone: Option<Cone>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Directory written by `gen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
    /// Model order; defaults to the teacher's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Extra states for improper mode.
    #[serde(default = "three")]
    pub extension: usize,
    /// Lag order for linreg mode; defaults to `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub sgd: SgdConfig,
}

fn three() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
    pub t_len: usize,
    #[serde(default)]
    pub sigma: f64,
    /// Longer lengths for the generalization sweep; defaults to `2T, 4T`.
    #[serde(default)]
    pub t_prime: Vec<usize>,
    #[serde(default = "h2_grid")]
    pub grid: usize,
    #[serde(default = "curve_points")]
    pub curve_points: usize,
}

fn h2_grid() -> usize {
    lds_core::poly::H2_GRID
}

fn curve_points() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default = "k_max")]
    pub k_max: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection { input: None, alpha: 1.0, grid: None, k_max: k_max() }
    }
}

fn one() -> f64 {
    1.0
}

fn k_max() -> usize {
    2000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn cone(&self) -> Cone {
        self.cone.unwrap_or_default()
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or_default()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
