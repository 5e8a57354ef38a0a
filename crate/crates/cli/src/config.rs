//! Run configuration: TOML file merged with command-line overrides.
//!
//! Flags always win over the file; the fully resolved result is echoed as
//! JSON before any data is touched.

use std::path::Path;

use serde::{Deserialize, Serialize};
use snh_core::mlp::TrainConfig;
use snh_core::model::{FitConfig, ScalingMode};

use crate::errors::{CliError, CliResult};

/// Grid width: fixed meters or learned from a selector model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Meters(f64),
    Named(RhoNamed),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoNamed {
    Paramselect,
}

impl std::str::FromStr for RhoSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("paramselect") {
            return Ok(RhoSpec::Named(RhoNamed::Paramselect));
        }
        s.parse::<f64>()
            .map(RhoSpec::Meters)
            .map_err(|_| format!("rho must be a number of meters or \"paramselect\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epsilon: Option<f64>,
    pub rho: Option<RhoSpec>,
    pub seed: Option<u64>,
    pub scaling: Option<ScalingMode>,
    pub psi: Option<f64>,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub train: TrainFileConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub l: Option<f64>,
    pub u: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub depth: Option<usize>,
    pub width: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

pub fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::user("CONFIG_NOT_FOUND", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::user("INVALID_CONFIG", e.to_string()))
}

/// Flag-level overrides shared by fit-like commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct FitFlags {
    /// Privacy budget epsilon.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Grid width in meters, or "paramselect" to use a selector model.
    #[arg(long)]
    pub rho: Option<RhoSpec>,
    /// Top-level seed; all internal randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query-size scaling at answer time: area or linear.
    #[arg(long)]
    pub scaling: Option<String>,
    /// Smoothing floor; defaults to 0.001 * n.
    #[arg(long)]
    pub psi: Option<f64>,
    /// Smallest training query size (meters).
    #[arg(long)]
    pub ladder_l: Option<f64>,
    /// Largest training query size (meters).
    #[arg(long)]
    pub ladder_u: Option<f64>,
    /// Number of training query sizes.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Fully resolved fit settings, every default materialized.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedFit {
    pub epsilon: f64,
    pub rho: RhoSpec,
    pub seed: u64,
    pub scaling: ScalingMode,
    pub psi: Option<f64>,
    pub ladder_l: f64,
    pub ladder_u: f64,
    pub k: usize,
    pub train: TrainConfig,
}

pub fn resolve_fit(file: &FileConfig, flags: &FitFlags) -> CliResult<ResolvedFit> {
    let defaults = FitConfig::default();
    let scaling = match flags.scaling.as_deref() {
        None => file.scaling.unwrap_or(defaults.scaling),
        Some("area") => ScalingMode::Area,
        Some("linear") => ScalingMode::Linear,
        Some(other) => {
            return Err(CliError::user(
                "INVALID_CONFIG",
                format!("scaling must be area or linear, got {other:?}"),
            ))
        }
    };
    let mut train = defaults.train.clone();
    train.depth = flags.depth.or(file.train.depth).unwrap_or(train.depth);
    train.width = flags.width.or(file.train.width).unwrap_or(train.width);
    train.epochs = flags.epochs.or(file.train.epochs).unwrap_or(train.epochs);
    train.batch_size = flags
        .batch_size
        .or(file.train.batch_size)
        .unwrap_or(train.batch_size);
    train.lr = flags.lr.or(file.train.lr).unwrap_or(train.lr);
    Ok(ResolvedFit {
        epsilon: flags.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
        rho: flags
            .rho
            .or(file.rho)
            .unwrap_or(RhoSpec::Meters(defaults.rho)),
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        scaling,
        psi: flags.psi.or(file.psi),
        ladder_l: flags.ladder_l.or(file.ladder.l).unwrap_or(defaults.ladder_l),
        ladder_u: flags.ladder_u.or(file.ladder.u).unwrap_or(defaults.ladder_u),
        k: flags.k.or(file.ladder.k).unwrap_or(defaults.k),
        train,
    })
}

impl ResolvedFit {
    /// Core fit config once rho has been pinned to concrete meters.
    pub fn to_fit_config(&self, rho_meters: f64) -> FitConfig {
        FitConfig {
            epsilon: self.epsilon,
            rho: rho_meters,
            ladder_l: self.ladder_l,
            ladder_u: self.ladder_u,
            k: self.k,
            train: self.train.clone(),
            scaling: self.scaling,
            seed: self.seed,
            psi: self.psi,
            ..FitConfig::default()
        }
    }
}

/// Echoes the resolved config for a command as one JSON line on stderr.
pub fn echo_config(command: &str, config: serde_json::Value) {
    eprintln!(
        "{}",
        serde_json::json!({ "command": command, "resolved_config": config })
    );
}
