//! Sanitization: equi-width grid partitioning and Laplace-noised cell counts.
//!
//! `collect` is the only operation in the crate that reads the sensitive
//! points, and it reads them exactly once. Each point lands in exactly one
//! cell, so parallel composition bounds the total privacy cost at epsilon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{PlanarDataset, PlanarPoint, Region};

pub use crate::geo::{AccessAudit, AuditLog};

/// Format version for serialized noisy histograms.
pub const HISTOGRAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("laplace scale must be positive, got {0}")]
    BadScale(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("cell width {rho} outside (0, {side}]")]
    BadCellWidth { rho: f64, side: f64 },
    #[error("histogram file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("histogram file corrupt: {0}")]
    Corrupt(String),
}

/// Equi-width grid over a region: `cells_per_side = ceil(side / rho)`.
///
/// Cells are congruent `rho x rho` squares indexed row-major from the
/// bottom-left; the last row/column may extend past the region edge when the
/// side is not a multiple of `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub region: Region,
    pub rho: f64,
    pub cells_per_side: usize,
}

impl Grid {
    pub fn new(region: Region, rho: f64) -> Result<Self, DpError> {
        if !(rho > 0.0) || rho > region.side || !rho.is_finite() {
            return Err(DpError::BadCellWidth {
                rho,
                side: region.side,
            });
        }
        let cells_per_side = (region.side / rho).ceil() as usize;
        Ok(Self {
            region,
            rho,
            cells_per_side,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    /// Bottom-left corner of the cell at (row, col).
    pub fn corner(&self, row: usize, col: usize) -> PlanarPoint {
        PlanarPoint::new(col as f64 * self.rho, row as f64 * self.rho)
    }

    /// Row-major index of the cell at (row, col).
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cells_per_side + col
    }

    /// Cell containing an in-region point.
    ///
    /// Returns `None` for out-of-region points. In-region points always map
    /// to a valid cell because the grid tiles at least the whole region.
    pub fn cell_of(&self, p: PlanarPoint) -> Option<(usize, usize)> {
        if !self.region.contains(p) {
            return None;
        }
        let col = ((p.x / self.rho) as usize).min(self.cells_per_side - 1);
        let row = ((p.y / self.rho) as usize).min(self.cells_per_side - 1);
        Some((row, col))
    }

    /// Ordered bottom-left corners, row-major.
    pub fn corners(&self) -> Vec<PlanarPoint> {
        let m = self.cells_per_side;
        (0..m)
            .flat_map(|row| (0..m).map(move |col| (row, col)))
            .map(|(row, col)| self.corner(row, col))
            .collect()
    }
}

/// Noisy per-cell counts `Y_D` released under epsilon-DP.
///
/// Answers are raw Laplace outputs: possibly negative, possibly fractional.
/// They are never clamped here so downstream training sees unbiased labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoisyHistogram {
    pub grid: Grid,
    pub answers: Vec<f64>,
    pub epsilon: f64,
    pub n: usize,
}

impl NoisyHistogram {
    pub fn answer(&self, row: usize, col: usize) -> f64 {
        self.answers[self.grid.index(row, col)]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "version": HISTOGRAM_FORMAT_VERSION,
            "region": self.grid.region,
            "rho": self.grid.rho,
            "epsilon": self.epsilon,
            "n": self.n,
            "answers": self.answers,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, DpError> {
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DpError::Corrupt("missing version".into()))? as u32;
        if version != HISTOGRAM_FORMAT_VERSION {
            return Err(DpError::VersionMismatch {
                found: version,
                expected: HISTOGRAM_FORMAT_VERSION,
            });
        }
        let parse = |key: &str| -> Result<serde_json::Value, DpError> {
            value
                .get(key)
                .cloned()
                .ok_or_else(|| DpError::Corrupt(format!("missing {key}")))
        };
        let region: Region = serde_json::from_value(parse("region")?)
            .map_err(|e| DpError::Corrupt(e.to_string()))?;
        let rho = parse("rho")?
            .as_f64()
            .ok_or_else(|| DpError::Corrupt("rho not a number".into()))?;
        let epsilon = parse("epsilon")?
            .as_f64()
            .ok_or_else(|| DpError::Corrupt("epsilon not a number".into()))?;
        let n = parse("n")?
            .as_u64()
            .ok_or_else(|| DpError::Corrupt("n not an integer".into()))? as usize;
        let answers: Vec<f64> = serde_json::from_value(parse("answers")?)
            .map_err(|e| DpError::Corrupt(e.to_string()))?;
        let grid = Grid::new(region, rho)?;
        if answers.len() != grid.num_cells() {
            return Err(DpError::Corrupt(format!(
                "expected {} answers, found {}",
                grid.num_cells(),
                answers.len()
            )));
        }
        Ok(Self {
            grid,
            answers,
            epsilon,
            n,
        })
    }
}

/// One draw from the Laplace distribution with the given scale.
///
/// Inverse-CDF sampling: `-b * sgn(u) * ln(1 - 2|u|)` with `u` uniform on
/// (-0.5, 0.5). Floating-point inverse-CDF sampling is not hardened against
/// side channels; deployments needing that should swap in a discrete
/// mechanism.
pub fn laplace_sample<R: Rng>(scale: f64, rng: &mut R) -> f64 {
    assert!(scale > 0.0, "laplace scale must be positive, got {scale}");
    let u = loop {
        let r: f64 = rng.random();
        if r > 0.0 {
            break r - 0.5;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Whether Laplace noise is applied during collection.
///
/// `Disabled` exists for oracle tests that compare against exact gridded
/// counts; the CLI never exposes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    Laplace,
    Disabled,
}

/// Releases the epsilon-DP noisy grid histogram for a dataset.
///
/// Single counting pass over the points, then exactly one `Lap(1/epsilon)`
/// draw per cell.
pub fn collect(
    d: &PlanarDataset,
    rho: f64,
    epsilon: f64,
    seed: u64,
) -> Result<NoisyHistogram, DpError> {
    collect_with_mode(d, rho, epsilon, NoiseMode::Laplace, seed)
}

pub fn collect_with_mode(
    d: &PlanarDataset,
    rho: f64,
    epsilon: f64,
    mode: NoiseMode,
    seed: u64,
) -> Result<NoisyHistogram, DpError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(DpError::BadEpsilon(epsilon));
    }
    let grid = Grid::new(*d.region(), rho)?;
    let mut counts = vec![0u64; grid.num_cells()];
    for p in d.read_points_audited() {
        // in-region is a dataset invariant, so cell_of cannot fail
        let (row, col) = grid.cell_of(*p).expect("dataset point outside region");
        counts[grid.index(row, col)] += 1;
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 1.0 / epsilon;
    let answers = counts
        .iter()
        .map(|&c| match mode {
            NoiseMode::Laplace => c as f64 + laplace_sample(scale, &mut rng),
            NoiseMode::Disabled => c as f64,
        })
        .collect();
    Ok(NoisyHistogram {
        grid,
        answers,
        epsilon,
        n: d.n(),
    })
}
