//! Projected dataset files: versioned JSON with the region and planar points.

use std::path::Path;

use serde::{Deserialize, Serialize};
use snh_core::geo::{PlanarDataset, PlanarPoint, Region};

use crate::errors::{CliError, CliResult};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    region: Region,
    /// `[x, y]` pairs in meters.
    points: Vec<[f64; 2]>,
}

pub fn save_dataset(d: &PlanarDataset, path: &Path) -> CliResult<()> {
    let file = DatasetFile {
        version: DATASET_FORMAT_VERSION,
        region: *d.region(),
        points: d.points().iter().map(|p| [p.x, p.y]).collect(),
    };
    let out = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(out), &file)
        .map_err(|e| CliError::runtime("IO_ERROR", e.to_string()))
}

pub fn load_dataset(path: &Path) -> CliResult<PlanarDataset> {
    if !path.exists() {
        return Err(CliError::user(
            "DATASET_NOT_FOUND",
            format!("no dataset at {}", path.display()),
        ));
    }
    let file = std::fs::File::open(path)?;
    let parsed: DatasetFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::user("INVALID_DATASET", e.to_string()))?;
    if parsed.version != DATASET_FORMAT_VERSION {
        return Err(CliError::user(
            "INVALID_DATASET",
            format!(
                "dataset file version {}, expected {}",
                parsed.version, DATASET_FORMAT_VERSION
            ),
        ));
    }
    let points = parsed
        .points
        .into_iter()
        .map(|[x, y]| PlanarPoint::new(x, y))
        .collect();
    Ok(PlanarDataset::from_planar(points, parsed.region))
}
