//! Experiment configuration: a TOML file with every key overridable by a
//! command-line flag of the same dotted name, plus an output-directory
//! environment override.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "VSPS_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vsps,
    NaiveQr,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Vsps => "vsps",
            Method::NaiveQr => "naive_qr",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "vsps" => Ok(Method::Vsps),
            "naive_qr" => Ok(Method::NaiveQr),
            other => Err(CliError::Config(format!("unknown method '{other}' (expected vsps or naive_qr)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// "synthetic" or "csv".
    pub source: String,
    /// Synthetic rows.
    pub n: usize,
    /// Synthetic generator seed (one dataset per run; splits vary by seed).
    pub seed: u64,
    /// CSV path when source = "csv".
    pub path: Option<String>,
    /// Response dimension d for CSV ingestion.
    pub response_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: "synthetic".into(),
            n: 2000,
            seed: 0,
            path: None,
            response_dim: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub blocks: usize,
    /// Hidden layer widths, shared by the flow blocks and the baseline
    /// quantile networks.
    pub hidden: Vec<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            blocks: 5,
            hidden: vec![64, 64, 64],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 256,
            max_epochs: 1000,
            patience: 20,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points_per_dim: usize,
    /// Probe count when volume falls back to Monte Carlo (d ≥ 4).
    pub mc_probes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            points_per_dim: 100,
            mc_probes: 200_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    /// Samples drawn per input.
    pub m: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// true reproduces the literal selection algorithm: γ(K) priced on the
    /// calibration split instead of a slice of the validation split.
    pub k_selection_uses_calibration_set: bool,
    pub output_dir: String,
    pub data: DataConfig,
    pub flow: FlowConfig,
    pub train: TrainSection,
    pub grid: GridConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 0.1,
            m: 100,
            seeds: vec![0],
            methods: vec![Method::Vsps, Method::NaiveQr],
            k_selection_uses_calibration_set: false,
            output_dir: "vsps-out".into(),
            data: DataConfig::default(),
            flow: FlowConfig::default(),
            train: TrainSection::default(),
            grid: GridConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.m < 1 {
            return Err(CliError::Config("m must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("at least one method is required".into()));
        }
        match self.data.source.as_str() {
            "synthetic" => {
                if self.data.n < 1 {
                    return Err(CliError::Config("data.n must be at least 1".into()));
                }
            }
            "csv" => {
                if self.data.path.is_none() {
                    return Err(CliError::Config("data.path is required when data.source = csv".into()));
                }
                if self.data.response_dim < 1 {
                    return Err(CliError::Config("data.response_dim must be at least 1".into()));
                }
            }
            other => {
                return Err(CliError::Config(format!("data.source must be synthetic or csv, got '{other}'")));
            }
        }
        if self.flow.blocks < 1 {
            return Err(CliError::Config("flow.blocks must be at least 1".into()));
        }
        if self.flow.hidden.is_empty() || self.flow.hidden.contains(&0) {
            return Err(CliError::Config("flow.hidden must be a non-empty list of positive widths".into()));
        }
        if self.train.batch_size < 1 {
            return Err(CliError::Config("train.batch_size must be at least 1".into()));
        }
        if self.train.patience > self.train.max_epochs {
            return Err(CliError::Config(format!(
                "train.patience {} exceeds train.max_epochs {}",
                self.train.patience, self.train.max_epochs
            )));
        }
        if self.train.learning_rate <= 0.0 {
            return Err(CliError::Config("train.learning_rate must be positive".into()));
        }
        if self.grid.points_per_dim < 2 {
            return Err(CliError::Config("grid.points_per_dim must be at least 2".into()));
        }
        if self.grid.mc_probes < 2 {
            return Err(CliError::Config("grid.mc_probes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn runs_method(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }
}

/// Every overridable key, in the dotted naming the config file uses; the CLI
/// exposes one long flag per entry.
pub const OVERRIDE_KEYS: &[&str] = &[
    "alpha",
    "m",
    "seeds",
    "methods",
    "k_selection_uses_calibration_set",
    "output_dir",
    "data.source",
    "data.n",
    "data.seed",
    "data.path",
    "data.response_dim",
    "flow.blocks",
    "flow.hidden",
    "train.batch_size",
    "train.max_epochs",
    "train.patience",
    "train.learning_rate",
    "grid.points_per_dim",
    "grid.mc_probes",
];

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("cannot parse '{s}' in list for key '{key}'"))))
        .collect()
}

pub fn apply_override(config: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), CliError> {
    match key {
        "alpha" => config.alpha = parse_scalar(key, value)?,
        "m" => config.m = parse_scalar(key, value)?,
        "seeds" => config.seeds = parse_list(key, value)?,
        "methods" => {
            config.methods = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(Method::parse)
                .collect::<Result<_, _>>()?
        }
        "k_selection_uses_calibration_set" => config.k_selection_uses_calibration_set = parse_scalar(key, value)?,
        "output_dir" => config.output_dir = value.to_string(),
        "data.source" => config.data.source = value.to_string(),
        "data.n" => config.data.n = parse_scalar(key, value)?,
        "data.seed" => config.data.seed = parse_scalar(key, value)?,
        "data.path" => config.data.path = Some(value.to_string()),
        "data.response_dim" => config.data.response_dim = parse_scalar(key, value)?,
        "flow.blocks" => config.flow.blocks = parse_scalar(key, value)?,
        "flow.hidden" => config.flow.hidden = parse_list(key, value)?,
        "train.batch_size" => config.train.batch_size = parse_scalar(key, value)?,
        "train.max_epochs" => config.train.max_epochs = parse_scalar(key, value)?,
        "train.patience" => config.train.patience = parse_scalar(key, value)?,
        "train.learning_rate" => config.train.learning_rate = parse_scalar(key, value)?,
        "grid.points_per_dim" => config.grid.points_per_dim = parse_scalar(key, value)?,
        "grid.mc_probes" => config.grid.mc_probes = parse_scalar(key, value)?,
        other => return Err(CliError::Config(format!("unknown config key '{other}'"))),
    }
    Ok(())
}

/// Reads the config file (defaults when absent), applies dotted-key
/// overrides in order, then the output-directory environment override, and
/// validates.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig, CliError> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    for (key, value) in overrides {
        apply_override(&mut config, key, value)?;
    }
    if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            config.output_dir = dir;
        }
    }
    config.validate()?;
    Ok(config)
}
