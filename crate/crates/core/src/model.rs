//! Pipeline orchestration: collect, augment, train one network per size, and
//! answer arbitrary range-count queries from the trained bank.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{augment, workload_weights, AugmentError, SizeLadder, WorkloadWeights};
use crate::dp::{collect_with_mode, AccessAudit, DpError, NoiseMode};
use crate::geo::{PlanarDataset, RangeQuery, Region};
use crate::mlp::{train, Mlp, TrainConfig, TrainError, TrainSample};
use crate::derive_seed;

/// Format version for model bundles.
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("training size {size}: {source}")]
    Train { size: f64, source: TrainError },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bundle corrupt: {0}")]
    Corrupt(String),
    #[error("bundle version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

/// How an answer from the nearest trained size is extrapolated to the
/// requested size.
///
/// The uniformity assumption over a 2D region scales counts with area, so
/// `Area` (factor `(r/r*)^2`) is the default; `Linear` (factor `r/r*`) is
/// kept selectable for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    #[default]
    Area,
    Linear,
}

/// Everything needed to reproduce and use a trained model bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub region: Region,
    pub rho: f64,
    pub epsilon: f64,
    pub n: usize,
    pub psi: f64,
    pub seed: u64,
    pub scaling: ScalingMode,
}

/// A bank of trained neural histograms, one per ladder size.
#[derive(Debug, Clone, PartialEq)]
pub struct SnhModel {
    pub ladder: SizeLadder,
    pub models: Vec<Mlp>,
    pub meta: ModelMeta,
}

/// Full fit configuration; `psi` defaults to `0.001 * n` when `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epsilon: f64,
    pub rho: f64,
    pub ladder_l: f64,
    pub ladder_u: f64,
    pub k: usize,
    pub train: TrainConfig,
    pub scaling: ScalingMode,
    pub seed: u64,
    pub psi: Option<f64>,
    pub noise: NoiseMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            rho: 100.0,
            ladder_l: 25.0,
            ladder_u: 100.0,
            k: 8,
            train: TrainConfig::default(),
            scaling: ScalingMode::Area,
            seed: 0,
            psi: None,
            noise: NoiseMode::Laplace,
        }
    }
}

/// Runs the full pipeline: one budgeted collection pass, augmentation,
/// workload weighting, then k independent trainings on the noisy labels.
///
/// The dataset audit log is sealed right after collection; the returned
/// audit must show zero post-collection reads.
pub fn fit(
    d: &PlanarDataset,
    cfg: &FitConfig,
    workload: &[RangeQuery],
) -> Result<(SnhModel, AccessAudit), ModelError> {
    let ladder = SizeLadder::new(cfg.ladder_l, cfg.ladder_u, cfg.k)?;
    let collect_seed = derive_seed(cfg.seed, "collect", 0);
    let hist = collect_with_mode(d, cfg.rho, cfg.epsilon, cfg.noise, collect_seed)?;
    d.audit_log().seal();

    let n = hist.n;
    let psi = cfg.psi.unwrap_or(0.001 * n as f64).max(f64::MIN_POSITIVE);
    let aug = augment(&hist, &ladder);
    let weights = if workload.is_empty() {
        WorkloadWeights::uniform(&aug)
    } else {
        workload_weights(&aug, workload)
    };

    // normalize: corners to the unit square, labels by n, psi consistently
    let side = d.region().side;
    let label_scale = if n > 0 { n as f64 } else { 1.0 };
    let psi_norm = psi / label_scale;
    let models: Result<Vec<Mlp>, ModelError> = ladder
        .sizes()
        .par_iter()
        .enumerate()
        .map(|(si, &r)| {
            let samples: Vec<TrainSample> = aug
                .corners
                .iter()
                .enumerate()
                .map(|(ci, c)| TrainSample {
                    x: [c.x / side, c.y / side],
                    label: aug.labels[si][ci] / label_scale,
                    weight: weights.weights[si][ci] as f64,
                })
                .collect();
            let train_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, "train", si as u64),
                psi: psi_norm,
                ..cfg.train.clone()
            };
            train(&samples, &train_cfg).map_err(|source| ModelError::Train { size: r, source })
        })
        .collect();

    let model = SnhModel {
        ladder,
        models: models?,
        meta: ModelMeta {
            region: *d.region(),
            rho: cfg.rho,
            epsilon: cfg.epsilon,
            n,
            psi,
            seed: cfg.seed,
            scaling: cfg.scaling,
        },
    };
    Ok((model, d.audit_log().snapshot()))
}

impl SnhModel {
    /// Answers an arbitrary query: nearest trained size, scaled extrapolation,
    /// final clamp to a nonnegative count.
    pub fn answer(&self, q: &RangeQuery) -> f64 {
        self.answer_unclamped(q).max(0.0)
    }

    /// Pre-clamp answer, exposed so scaling consistency is directly testable.
    pub fn answer_unclamped(&self, q: &RangeQuery) -> f64 {
        let r_star = self.ladder.nearest(q.side);
        let index = self
            .ladder
            .sizes()
            .iter()
            .position(|&s| s == r_star)
            .expect("nearest size is in the ladder");
        let side = self.meta.region.side;
        let x = [q.corner.x / side, q.corner.y / side];
        let normalized = self.models[index].forward(x);
        let scale = match self.meta.scaling {
            ScalingMode::Area => (q.side / r_star).powi(2),
            ScalingMode::Linear => q.side / r_star,
        };
        normalized * self.meta.n as f64 * scale
    }

    /// Writes the bundle: `manifest.json` plus one weight file per size.
    ///
    /// All floats go through JSON with round-trip-exact formatting, so a
    /// reloaded model answers bit-identically.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        std::fs::create_dir_all(dir)?;
        let mut weight_files = Vec::new();
        for (i, model) in self.models.iter().enumerate() {
            let name = format!("model_{i:02}.json");
            let file = std::fs::File::create(dir.join(&name))?;
            serde_json::to_writer(file, model).map_err(|e| ModelError::Corrupt(e.to_string()))?;
            weight_files.push(name);
        }
        let manifest = serde_json::json!({
            "version": BUNDLE_FORMAT_VERSION,
            "meta": self.meta,
            "ladder": self.ladder,
            "weight_files": weight_files,
        });
        let file = std::fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(file, &manifest)
            .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let manifest: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(dir.join("manifest.json"))?)
                .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let version = manifest
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Corrupt("missing version".into()))? as u32;
        if version != BUNDLE_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: version,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        let meta: ModelMeta = serde_json::from_value(
            manifest
                .get("meta")
                .cloned()
                .ok_or_else(|| ModelError::Corrupt("missing meta".into()))?,
        )
        .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let ladder: SizeLadder = serde_json::from_value(
            manifest
                .get("ladder")
                .cloned()
                .ok_or_else(|| ModelError::Corrupt("missing ladder".into()))?,
        )
        .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let weight_files: Vec<String> = serde_json::from_value(
            manifest
                .get("weight_files")
                .cloned()
                .ok_or_else(|| ModelError::Corrupt("missing weight_files".into()))?,
        )
        .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        if weight_files.len() != ladder.sizes().len() {
            return Err(ModelError::Corrupt(format!(
                "{} weight files for {} ladder sizes",
                weight_files.len(),
                ladder.sizes().len()
            )));
        }
        let models = weight_files
            .iter()
            .map(|name| {
                serde_json::from_reader(std::fs::File::open(dir.join(name))?)
                    .map_err(|e| ModelError::Corrupt(e.to_string()))
            })
            .collect::<Result<Vec<Mlp>, ModelError>>()?;
        Ok(Self {
            ladder,
            models,
            meta,
        })
    }
}
