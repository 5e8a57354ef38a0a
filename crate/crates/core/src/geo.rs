//! Geometry, projection, datasets, queries, ground truth and the error metric.

use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Earth radius used by the equirectangular projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("latitude {0} out of range [-90, 90]")]
    LatOutOfRange(f64),
    #[error("longitude {0} out of range [-180, 180]")]
    LonOutOfRange(f64),
    #[error("region side must be positive, got {0}")]
    BadSide(f64),
    #[error("query side must be positive, got {0}")]
    BadQuerySide(f64),
    #[error("csv line {line}: {reason}")]
    BadCsvRow { line: u64, reason: String },
    #[error("csv read failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A latitude/longitude coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) || !lat.is_finite() {
            return Err(GeoError::LatOutOfRange(lat));
        }
        if !(-180.0..=180.0).contains(&lon) || !lon.is_finite() {
            return Err(GeoError::LonOutOfRange(lon));
        }
        Ok(Self { lat, lon })
    }
}

/// A square spatial region of `side` x `side` meters centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: GeoPoint,
    pub side: f64,
}

impl Region {
    pub fn new(center: GeoPoint, side: f64) -> Result<Self, GeoError> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(GeoError::BadSide(side));
        }
        Ok(Self { center, side })
    }

    /// True if a local-coordinate point lies inside the region (half-open).
    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= 0.0 && p.x < self.side && p.y >= 0.0 && p.y < self.side
    }
}

/// Local coordinates in meters; the origin is the region's bottom-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Equirectangular projection of a geo-coordinate into region-local meters.
///
/// Deterministic; points outside the region map outside `[0, side)^2` and are
/// filtered by the caller.
pub fn project(p: GeoPoint, region: &Region) -> PlanarPoint {
    let lat0 = region.center.lat.to_radians();
    let deg = std::f64::consts::PI / 180.0;
    let x = EARTH_RADIUS_M * (p.lon - region.center.lon) * lat0.cos() * deg + region.side / 2.0;
    let y = EARTH_RADIUS_M * (p.lat - region.center.lat) * deg + region.side / 2.0;
    PlanarPoint { x, y }
}

/// An axis-parallel square range query: bottom-left corner plus side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    pub corner: PlanarPoint,
    pub side: f64,
}

impl RangeQuery {
    pub fn new(corner: PlanarPoint, side: f64) -> Result<Self, GeoError> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(GeoError::BadQuerySide(side));
        }
        Ok(Self { corner, side })
    }

    /// Half-open membership on both axes: `c[i] <= p[i] < c[i] + r`.
    pub fn contains(&self, p: PlanarPoint) -> bool {
        p.x >= self.corner.x
            && p.x < self.corner.x + self.side
            && p.y >= self.corner.y
            && p.y < self.corner.y + self.side
    }
}

/// Counters tracking how often the raw points were touched.
///
/// `point_reads` covers the data-collection phase; once the log is sealed any
/// further audited access lands in `post_collection_reads`, which must stay
/// zero for a compliant pipeline.
#[derive(Debug, Default)]
pub struct AuditLog {
    sealed: AtomicBool,
    point_reads: AtomicU64,
    post_collection_reads: AtomicU64,
}

impl AuditLog {
    pub fn record_reads(&self, count: u64) {
        if self.sealed.load(Ordering::SeqCst) {
            self.post_collection_reads.fetch_add(count, Ordering::SeqCst);
        } else {
            self.point_reads.fetch_add(count, Ordering::SeqCst);
        }
    }

    /// Marks the end of the data-collection phase.
    pub fn seal(&self) {
        self.sealed.store(true, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> AccessAudit {
        AccessAudit {
            point_reads: self.point_reads.load(Ordering::SeqCst),
            post_collection_reads: self.post_collection_reads.load(Ordering::SeqCst),
        }
    }
}

/// Snapshot of the access counters for a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessAudit {
    pub point_reads: u64,
    pub post_collection_reads: u64,
}

impl AccessAudit {
    pub fn is_compliant(&self) -> bool {
        self.post_collection_reads == 0
    }
}

/// An immutable set of projected points within a region.
///
/// Construction drops points outside the region; `n` counts only retained
/// points. No identifiers or timestamps survive ingestion.
#[derive(Debug, Clone)]
pub struct PlanarDataset {
    points: Vec<PlanarPoint>,
    region: Region,
    audit: Arc<AuditLog>,
}

impl PlanarDataset {
    /// Builds a dataset from already-projected points, dropping out-of-region ones.
    pub fn from_planar(points: Vec<PlanarPoint>, region: Region) -> Self {
        let points = points.into_iter().filter(|p| region.contains(*p)).collect();
        Self {
            points,
            region,
            audit: Arc::new(AuditLog::default()),
        }
    }

    /// Projects geo-coordinates into the region and drops points that fall outside.
    pub fn from_geo(points: impl IntoIterator<Item = GeoPoint>, region: Region) -> Self {
        let projected = points.into_iter().map(|g| project(g, &region)).collect();
        Self::from_planar(projected, region)
    }

    /// Ingests a CSV file with header and `lat,lon` columns in decimal degrees.
    ///
    /// Any row that fails to parse or violates coordinate ranges aborts the
    /// ingestion with the offending line number.
    pub fn from_csv<R: Read>(reader: R, region: Region) -> Result<Self, GeoError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let lat_idx = headers.iter().position(|h| h.trim() == "lat");
        let lon_idx = headers.iter().position(|h| h.trim() == "lon");
        let (lat_idx, lon_idx) = match (lat_idx, lon_idx) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(GeoError::BadCsvRow {
                    line: 1,
                    reason: "header must contain `lat` and `lon` columns".into(),
                })
            }
        };
        let mut geo = Vec::new();
        for result in rdr.records() {
            let record = result?;
            let line = record
                .position()
                .map(|p| p.line())
                .unwrap_or(0);
            let parse = |idx: usize, name: &str| -> Result<f64, GeoError> {
                record
                    .get(idx)
                    .ok_or_else(|| GeoError::BadCsvRow {
                        line,
                        reason: format!("missing `{name}` field"),
                    })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GeoError::BadCsvRow {
                        line,
                        reason: format!("bad `{name}` value: {e}"),
                    })
            };
            let lat = parse(lat_idx, "lat")?;
            let lon = parse(lon_idx, "lon")?;
            let point = GeoPoint::new(lat, lon).map_err(|e| GeoError::BadCsvRow {
                line,
                reason: e.to_string(),
            })?;
            geo.push(point);
        }
        Ok(Self::from_geo(geo, region))
    }

    pub fn from_csv_path(path: &Path, region: Region) -> Result<Self, GeoError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv(file, region)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Audited access to the raw points; every call is counted against the
    /// current audit phase. The sanitization pass must be the only caller.
    pub fn read_points_audited(&self) -> &[PlanarPoint] {
        self.audit.record_reads(self.points.len() as u64);
        &self.points
    }

    /// Out-of-band access for ground truth and public-data work; not counted.
    pub fn points(&self) -> &[PlanarPoint] {
        &self.points
    }

    pub fn audit_log(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    /// Copy with a fresh, unsealed audit log; used when the same (public)
    /// dataset is fit repeatedly, e.g. during empirical parameter search.
    pub fn fresh_audit(&self) -> Self {
        Self {
            points: self.points.clone(),
            region: self.region,
            audit: Arc::new(AuditLog::default()),
        }
    }
}

/// Exact answer to a range-count query: `f(q)` with half-open bounds.
pub fn true_count(d: &PlanarDataset, q: &RangeQuery) -> u64 {
    d.points().iter().filter(|p| q.contains(**p)).count() as u64
}

/// Relative error `|y - truth| / max(truth, psi)`.
///
/// `psi` must be positive; it floors the denominator so zero-count queries
/// are still scored.
pub fn relative_error(y: f64, truth: f64, psi: f64) -> f64 {
    assert!(psi > 0.0, "psi must be positive, got {psi}");
    (y - truth).abs() / truth.max(psi)
}
