//! Workload generation, synthetic datasets and error evaluation.
//!
//! Ground truth comes from exact counting on the raw points. That path is
//! evaluation-only and out-of-band: it never spends budget and is not part of
//! the released pipeline.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{relative_error, true_count, PlanarDataset, PlanarPoint, RangeQuery, Region};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can answer a range-count query.
pub trait Answerer: Sync {
    fn answer(&self, q: &RangeQuery) -> f64;
}

impl Answerer for crate::model::SnhModel {
    fn answer(&self, q: &RangeQuery) -> f64 {
        crate::model::SnhModel::answer(self, q)
    }
}

impl Answerer for crate::baselines::GridAnswerer {
    fn answer(&self, q: &RangeQuery) -> f64 {
        crate::baselines::GridAnswerer::answer(self, q)
    }
}

impl<F: Fn(&RangeQuery) -> f64 + Sync> Answerer for F {
    fn answer(&self, q: &RangeQuery) -> f64 {
        self(q)
    }
}

/// A reproducible set of square queries with sizes in `[l, u]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Workload {
    pub queries: Vec<RangeQuery>,
    pub seed: u64,
    pub l: f64,
    pub u: f64,
}

/// Samples queries centered uniformly in the region with sizes uniform in
/// `[l, u]`; corners are `center - r/2`, so queries may hang off the edges.
pub fn gen_workload(region: &Region, count: usize, l: f64, u: f64, seed: u64) -> Workload {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let queries = (0..count)
        .map(|_| {
            let cx = rng.random_range(0.0..region.side);
            let cy = rng.random_range(0.0..region.side);
            let r = if l < u { rng.random_range(l..=u) } else { l };
            RangeQuery {
                corner: PlanarPoint::new(cx - r / 2.0, cy - r / 2.0),
                side: r,
            }
        })
        .collect();
    Workload {
        queries,
        seed,
        l,
        u,
    }
}

/// Points i.i.d. uniform over the region.
pub fn gen_uniform(n: usize, region: Region, seed: u64) -> PlanarDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| PlanarPoint::new(rng.random_range(0.0..region.side), rng.random_range(0.0..region.side)))
        .collect();
    PlanarDataset::from_planar(points, region)
}

/// One isotropic Gaussian blob: center in region-local meters, standard
/// deviation in meters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub center: PlanarPoint,
    pub sigma: f64,
}

/// Equal-weight Gaussian mixture truncated to the region by resampling.
pub fn gen_mixture(
    n: usize,
    region: Region,
    components: &[MixtureComponent],
    seed: u64,
) -> PlanarDataset {
    assert!(!components.is_empty(), "mixture needs at least one component");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let comp = components[rng.random_range(0..components.len())];
        let p = if comp.sigma > 0.0 {
            let (gx, gy) = gaussian_pair(&mut rng);
            PlanarPoint::new(
                comp.center.x + comp.sigma * gx,
                comp.center.y + comp.sigma * gy,
            )
        } else {
            comp.center
        };
        if region.contains(p) {
            points.push(p);
        }
    }
    PlanarDataset::from_planar(points, region)
}

// Box-Muller pair of independent standard normals.
fn gaussian_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.random();
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = 2.0 * std::f64::consts::PI * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// Scatters `count` mixture centers uniformly over the middle of the region.
pub fn random_mixture_components(
    region: &Region,
    count: usize,
    sigma: f64,
    seed: u64,
) -> Vec<MixtureComponent> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| MixtureComponent {
            center: PlanarPoint::new(
                rng.random_range(0.1 * region.side..0.9 * region.side),
                rng.random_range(0.1 * region.side..0.9 * region.side),
            ),
            sigma,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    pub query: RangeQuery,
    pub estimate: f64,
    pub truth: u64,
    pub rel_error: f64,
}

/// Per-query results plus aggregates, all recomputable from the rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub psi: f64,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, psi: f64) -> Self {
        let mut errors: Vec<f64> = rows.iter().map(|r| r.rel_error).collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        Self {
            rows,
            psi,
            mean,
            median: percentile(&errors, 0.5),
            p90: percentile(&errors, 0.9),
        }
    }

    /// Per-query CSV: `cx,cy,r,estimate,truth,rel_error`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), EvalError> {
        writeln!(out, "cx,cy,r,estimate,truth,rel_error")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.query.corner.x,
                row.query.corner.y,
                row.query.side,
                row.estimate,
                row.truth,
                row.rel_error
            )?;
        }
        Ok(())
    }

    /// Aggregate summary as JSON.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "queries": self.rows.len(),
            "psi": self.psi,
            "mean": self.mean,
            "median": self.median,
            "p90": self.p90,
        })
    }
}

/// Sorted-array percentile with linear interpolation.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Scores an answerer against exact counts on the truth dataset.
///
/// `psi` defaults to `0.001 * n` when `None`.
pub fn evaluate(
    answerer: &dyn Answerer,
    workload: &Workload,
    truth: &PlanarDataset,
    psi: Option<f64>,
) -> EvalReport {
    let psi = psi
        .unwrap_or(0.001 * truth.n() as f64)
        .max(f64::MIN_POSITIVE);
    let rows: Vec<EvalRow> = workload
        .queries
        .par_iter()
        .map(|q| {
            let estimate = answerer.answer(q);
            let t = true_count(truth, q);
            EvalRow {
                query: *q,
                estimate,
                truth: t,
                rel_error: relative_error(estimate, t as f64, psi),
            }
        })
        .collect();
    EvalReport::from_rows(rows, psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;

    fn region(side: f64) -> Region {
        Region::new(GeoPoint::new(0.0, 0.0).unwrap(), side).unwrap()
    }

    #[test]
    fn workload_is_reproducible_and_within_bounds() {
        let reg = region(1000.0);
        let a = gen_workload(&reg, 5000, 25.0, 100.0, 3);
        let b = gen_workload(&reg, 5000, 25.0, 100.0, 3);
        assert_eq!(a.queries.len(), 5000);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        for q in &a.queries {
            assert!((25.0..=100.0).contains(&q.side));
        }
        let mean_size = a.queries.iter().map(|q| q.side).sum::<f64>() / 5000.0;
        assert!((mean_size - 62.5).abs() < 2.0, "mean size {mean_size}");
    }

    #[test]
    fn single_query_workload_is_deterministic() {
        let reg = region(100.0);
        let a = gen_workload(&reg, 1, 25.0, 100.0, 9);
        let b = gen_workload(&reg, 1, 25.0, 100.0, 9);
        assert_eq!(a.queries[0], b.queries[0]);
    }

    #[test]
    fn uniform_quadrants_balance_binomially() {
        let reg = region(100.0);
        let d = gen_uniform(10_000, reg, 1);
        assert_eq!(d.n(), 10_000);
        for (qx, qy) in [(0.0, 0.0), (50.0, 0.0), (0.0, 50.0), (50.0, 50.0)] {
            let q = RangeQuery::new(PlanarPoint::new(qx, qy), 50.0).unwrap();
            let count = true_count(&d, &q) as f64;
            // 3 sigma binomial bound around 2500
            assert!((count - 2500.0).abs() < 3.0 * (2500.0f64 * 0.75).sqrt());
        }
    }

    #[test]
    fn zero_sigma_mixture_collapses_to_center() {
        let reg = region(100.0);
        let comp = MixtureComponent {
            center: PlanarPoint::new(30.0, 70.0),
            sigma: 0.0,
        };
        let d = gen_mixture(50, reg, &[comp], 4);
        assert!(d.points().iter().all(|p| p.x == 30.0 && p.y == 70.0));
    }

    #[test]
    fn mixture_is_reproducible_under_seed() {
        let reg = region(100.0);
        let comps = random_mixture_components(&reg, 3, 10.0, 11);
        let a = gen_mixture(500, reg, &comps, 12);
        let b = gen_mixture(500, reg, &comps, 12);
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn perfect_answerer_scores_zero() {
        let reg = region(100.0);
        let d = gen_uniform(1000, reg, 5);
        let workload = gen_workload(&reg, 100, 10.0, 50.0, 6);
        let exact = |q: &RangeQuery| true_count(&d, q) as f64;
        let report = evaluate(&exact, &workload, &d, None);
        assert!(report.rows.iter().all(|r| r.rel_error == 0.0));
        assert_eq!(report.mean, 0.0);
        assert_eq!(report.p90, 0.0);
    }

    #[test]
    fn constant_zero_answerer_error_profile() {
        let reg = region(100.0);
        let d = gen_uniform(1000, reg, 5);
        let zero = |_: &RangeQuery| 0.0;
        // query with truth 0: numerator 0 => error 0
        let empty_corner = Workload {
            queries: vec![RangeQuery::new(PlanarPoint::new(-200.0, -200.0), 10.0).unwrap()],
            seed: 0,
            l: 10.0,
            u: 10.0,
        };
        let report = evaluate(&zero, &empty_corner, &d, None);
        assert_eq!(report.rows[0].rel_error, 0.0);
        // truth above psi => error exactly 1
        let full = Workload {
            queries: vec![RangeQuery::new(PlanarPoint::new(0.0, 0.0), 100.0).unwrap()],
            seed: 0,
            l: 100.0,
            u: 100.0,
        };
        let report = evaluate(&zero, &full, &d, None);
        assert_eq!(report.rows[0].rel_error, 1.0);
    }

    #[test]
    fn aggregates_match_recomputation_from_rows() {
        let reg = region(100.0);
        let d = gen_uniform(500, reg, 7);
        let workload = gen_workload(&reg, 200, 10.0, 60.0, 8);
        let sloppy = |q: &RangeQuery| true_count(&d, q) as f64 + q.side * 0.01;
        let report = evaluate(&sloppy, &workload, &d, None);
        let mut errors: Vec<f64> = report.rows.iter().map(|r| r.rel_error).collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        assert_eq!(report.mean, mean);
        assert_eq!(report.median, percentile(&errors, 0.5));
        assert_eq!(report.p90, percentile(&errors, 0.9));
    }

    #[test]
    fn csv_export_round_trips_row_count() {
        let reg = region(100.0);
        let d = gen_uniform(100, reg, 7);
        let workload = gen_workload(&reg, 10, 10.0, 60.0, 8);
        let exact = |q: &RangeQuery| true_count(&d, q) as f64;
        let report = evaluate(&exact, &workload, &d, None);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }
}
