//! Spatial data augmentation: expand the noisy grid into training sets at
//! several query sizes, and weight training queries by workload overlap.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::{Grid, NoisyHistogram};
use crate::geo::{PlanarPoint, RangeQuery};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("size ladder requires 0 < l <= u, got l={l}, u={u}")]
    BadBounds { l: f64, u: f64 },
    #[error("size ladder requires k >= 1")]
    BadCount,
    #[error("csv write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// The k training query sizes: midpoints of k equal slices of [l, u].
///
/// `R[i] = l + (u - l)/k * (i + 1/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeLadder {
    pub l: f64,
    pub u: f64,
    sizes: Vec<f64>,
}

impl SizeLadder {
    pub fn new(l: f64, u: f64, k: usize) -> Result<Self, AugmentError> {
        if !(l > 0.0 && l <= u) || !l.is_finite() || !u.is_finite() {
            return Err(AugmentError::BadBounds { l, u });
        }
        if k == 0 {
            return Err(AugmentError::BadCount);
        }
        let sizes = (0..k)
            .map(|i| l + (u - l) / k as f64 * (i as f64 + 0.5))
            .collect();
        Ok(Self { l, u, sizes })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// The trained size closest to `r`; ties break toward the smaller size.
    pub fn nearest(&self, r: f64) -> f64 {
        let mut best = self.sizes[0];
        let mut best_gap = (r - best).abs();
        for &s in &self.sizes[1..] {
            let gap = (r - s).abs();
            if gap < best_gap {
                best = s;
                best_gap = gap;
            }
        }
        best
    }
}

/// Area of the intersection of two axis-aligned squares, in square meters.
pub fn overlap_area(q1: &RangeQuery, q2: &RangeQuery) -> f64 {
    let dx = (q1.corner.x + q1.side).min(q2.corner.x + q2.side) - q1.corner.x.max(q2.corner.x);
    let dy = (q1.corner.y + q1.side).min(q2.corner.y + q2.side) - q1.corner.y.max(q2.corner.y);
    if dx > 0.0 && dy > 0.0 {
        dx * dy
    } else {
        0.0
    }
}

/// Uniformity estimate for an arbitrary query over a noisy grid:
/// `sum_c (|q ∩ cell_c| / rho^2) * Y_D[c]`.
///
/// Only the cells in the query's index range are visited; area hanging off
/// the grid contributes zero mass.
pub fn uniformity_estimate(h: &NoisyHistogram, q: &RangeQuery) -> f64 {
    let grid = &h.grid;
    let rho = grid.rho;
    let m = grid.cells_per_side;
    let lo_col = (q.corner.x / rho).floor().max(0.0) as isize;
    let hi_col = (((q.corner.x + q.side) / rho).ceil() as isize).min(m as isize);
    let lo_row = (q.corner.y / rho).floor().max(0.0) as isize;
    let hi_row = (((q.corner.y + q.side) / rho).ceil() as isize).min(m as isize);
    if q.corner.x + q.side <= 0.0 || q.corner.y + q.side <= 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let inv_cell_area = 1.0 / (rho * rho);
    for row in lo_row.max(0)..hi_row.max(0) {
        for col in lo_col.max(0)..hi_col.max(0) {
            let cell = RangeQuery {
                corner: grid.corner(row as usize, col as usize),
                side: rho,
            };
            let area = overlap_area(q, &cell);
            if area > 0.0 {
                sum += area * inv_cell_area * h.answers[grid.index(row as usize, col as usize)];
            }
        }
    }
    sum
}

/// Per-size training samples: queries anchored at every grid corner with
/// uniformity-derived labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentedSet {
    pub grid: Grid,
    pub sizes: Vec<f64>,
    pub corners: Vec<PlanarPoint>,
    /// labels[size_index][corner_index]
    pub labels: Vec<Vec<f64>>,
}

impl AugmentedSet {
    pub fn label(&self, size_index: usize, corner_index: usize) -> f64 {
        self.labels[size_index][corner_index]
    }
}

/// Builds the augmented training set for every size in the ladder.
pub fn augment(h: &NoisyHistogram, ladder: &SizeLadder) -> AugmentedSet {
    let corners = h.grid.corners();
    let labels = ladder
        .sizes()
        .iter()
        .map(|&r| {
            corners
                .iter()
                .map(|&c| uniformity_estimate(h, &RangeQuery { corner: c, side: r }))
                .collect()
        })
        .collect();
    AugmentedSet {
        grid: h.grid,
        sizes: ladder.sizes().to_vec(),
        corners,
        labels,
    }
}

/// Count of workload queries positively intersecting each training query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadWeights {
    /// weights[size_index][corner_index]
    pub weights: Vec<Vec<u32>>,
}

impl WorkloadWeights {
    /// All-ones weights for an empty workload.
    pub fn uniform(aug: &AugmentedSet) -> Self {
        Self {
            weights: aug
                .labels
                .iter()
                .map(|l| vec![1u32; l.len()])
                .collect(),
        }
    }

    pub fn weight(&self, size_index: usize, corner_index: usize) -> u32 {
        self.weights[size_index][corner_index]
    }
}

// Intersection uses positive-area contact: queries that only touch along an
// edge or corner share zero area and do not count.
fn intersects(a: &RangeQuery, b: &RangeQuery) -> bool {
    a.corner.x < b.corner.x + b.side
        && b.corner.x < a.corner.x + a.side
        && a.corner.y < b.corner.y + b.side
        && b.corner.y < a.corner.y + a.side
}

/// Computes `w_(c,r)` for every training query.
///
/// Workload queries are bucketed on the data grid so each training query only
/// probes its own neighborhood; the predicate itself stays exact.
pub fn workload_weights(aug: &AugmentedSet, workload: &[RangeQuery]) -> WorkloadWeights {
    if workload.is_empty() {
        return WorkloadWeights {
            weights: aug.labels.iter().map(|l| vec![0u32; l.len()]).collect(),
        };
    }
    let grid = &aug.grid;
    let m = grid.cells_per_side as isize;
    let rho = grid.rho;
    // bucket each workload query into every grid cell it overlaps
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); grid.num_cells()];
    for (qi, q) in workload.iter().enumerate() {
        let lo_col = ((q.corner.x / rho).floor() as isize).clamp(0, m - 1);
        let hi_col = (((q.corner.x + q.side) / rho).ceil() as isize).clamp(0, m);
        let lo_row = ((q.corner.y / rho).floor() as isize).clamp(0, m - 1);
        let hi_row = (((q.corner.y + q.side) / rho).ceil() as isize).clamp(0, m);
        if q.corner.x + q.side <= 0.0 || q.corner.y + q.side <= 0.0 {
            continue;
        }
        for row in lo_row..hi_row {
            for col in lo_col..hi_col {
                buckets[grid.index(row as usize, col as usize)].push(qi as u32);
            }
        }
    }
    let mut last_seen: Vec<u32> = vec![u32::MAX; workload.len()];
    let mut weights = Vec::with_capacity(aug.sizes.len());
    let mut stamp: u32 = 0;
    for (si, &r) in aug.sizes.iter().enumerate() {
        let mut per_corner = Vec::with_capacity(aug.corners.len());
        for &c in &aug.corners {
            let tq = RangeQuery { corner: c, side: r };
            stamp += 1;
            let lo_col = ((c.x / rho).floor() as isize).clamp(0, m - 1);
            let hi_col = (((c.x + r) / rho).ceil() as isize).clamp(0, m);
            let lo_row = ((c.y / rho).floor() as isize).clamp(0, m - 1);
            let hi_row = (((c.y + r) / rho).ceil() as isize).clamp(0, m);
            let mut w = 0u32;
            for row in lo_row..hi_row {
                for col in lo_col..hi_col {
                    for &qi in &buckets[grid.index(row as usize, col as usize)] {
                        if last_seen[qi as usize] == stamp {
                            continue;
                        }
                        last_seen[qi as usize] = stamp;
                        if intersects(&tq, &workload[qi as usize]) {
                            w += 1;
                        }
                    }
                }
            }
            per_corner.push(w);
        }
        let _ = si;
        weights.push(per_corner);
    }
    WorkloadWeights { weights }
}

/// Writes one size's training samples as `cx,cy,r,label,weight` rows.
pub fn export_csv<W: Write>(
    aug: &AugmentedSet,
    weights: &WorkloadWeights,
    size_index: usize,
    mut out: W,
) -> Result<(), AugmentError> {
    writeln!(out, "cx,cy,r,label,weight")?;
    let r = aug.sizes[size_index];
    for (ci, c) in aug.corners.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.x,
            c.y,
            r,
            aug.labels[size_index][ci],
            weights.weights[size_index][ci]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{collect_with_mode, NoiseMode};
    use crate::geo::{GeoPoint, PlanarDataset, Region};
    use proptest::prelude::*;

    fn region(side: f64) -> Region {
        Region::new(GeoPoint::new(0.0, 0.0).unwrap(), side).unwrap()
    }

    fn histogram_2x2(counts: [f64; 4]) -> NoisyHistogram {
        // corners (0,0),(50,0),(0,50),(50,50) row-major
        NoisyHistogram {
            grid: Grid::new(region(100.0), 50.0).unwrap(),
            answers: counts.to_vec(),
            epsilon: 1.0,
            n: counts.iter().sum::<f64>() as usize,
        }
    }

    #[test]
    fn ladder_matches_midpoint_formula() {
        let ladder = SizeLadder::new(25.0, 100.0, 4).unwrap();
        assert_eq!(ladder.sizes(), &[34.375, 53.125, 71.875, 90.625]);
        let one = SizeLadder::new(25.0, 25.0, 1).unwrap();
        assert_eq!(one.sizes(), &[25.0]);
        let two = SizeLadder::new(10.0, 110.0, 2).unwrap();
        assert_eq!(two.sizes(), &[35.0, 85.0]);
    }

    #[test]
    fn ladder_rejects_bad_inputs() {
        assert!(SizeLadder::new(0.0, 10.0, 2).is_err());
        assert!(SizeLadder::new(20.0, 10.0, 2).is_err());
        assert!(SizeLadder::new(10.0, 20.0, 0).is_err());
    }

    #[test]
    fn overlap_area_cases() {
        let a = RangeQuery::new(PlanarPoint::new(0.0, 0.0), 50.0).unwrap();
        assert_eq!(overlap_area(&a, &a), 2500.0);
        let far = RangeQuery::new(PlanarPoint::new(100.0, 100.0), 50.0).unwrap();
        assert_eq!(overlap_area(&a, &far), 0.0);
        let q1 = RangeQuery::new(PlanarPoint::new(0.0, 0.0), 100.0).unwrap();
        let q2 = RangeQuery::new(PlanarPoint::new(50.0, 50.0), 100.0).unwrap();
        assert_eq!(overlap_area(&q1, &q2), 2500.0);
    }

    #[test]
    fn aligned_query_of_cell_size_reproduces_cell_answer() {
        let h = histogram_2x2([1.0, 2.0, 3.0, 4.0]);
        let ladder = SizeLadder::new(50.0, 50.0, 1).unwrap();
        let aug = augment(&h, &ladder);
        assert_eq!(aug.labels[0], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn full_cover_sums_all_cells() {
        let h = histogram_2x2([1.0, 2.0, 3.0, 4.0]);
        let q = RangeQuery::new(PlanarPoint::new(0.0, 0.0), 100.0).unwrap();
        assert_eq!(uniformity_estimate(&h, &q), 10.0);
    }

    #[test]
    fn quarter_overlap_takes_quarter_of_each_cell() {
        let h = histogram_2x2([1.0, 2.0, 3.0, 4.0]);
        let q = RangeQuery::new(PlanarPoint::new(25.0, 25.0), 50.0).unwrap();
        assert!((uniformity_estimate(&h, &q) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn mass_outside_grid_is_zero() {
        let h = histogram_2x2([1.0, 1.0, 1.0, 1.0]);
        // hangs half off the right edge: only the in-grid half contributes,
        // all of it from the bottom-right cell
        let q = RangeQuery::new(PlanarPoint::new(75.0, 0.0), 50.0).unwrap();
        let expect = (25.0 * 50.0) / 2500.0;
        let got = uniformity_estimate(&h, &q);
        assert!((got - expect).abs() < 1e-12, "got {got}");
        let outside = RangeQuery::new(PlanarPoint::new(-60.0, 0.0), 50.0).unwrap();
        assert_eq!(uniformity_estimate(&h, &outside), 0.0);
    }

    #[test]
    fn conservation_with_noise_disabled() {
        let pts = (0..100)
            .map(|i| PlanarPoint::new((i % 10) as f64 * 9.7 + 0.5, (i / 10) as f64 * 9.7 + 0.5))
            .collect();
        let d = PlanarDataset::from_planar(pts, region(100.0));
        let h = collect_with_mode(&d, 25.0, 1.0, NoiseMode::Disabled, 0).unwrap();
        let q = RangeQuery::new(PlanarPoint::new(0.0, 0.0), 100.0).unwrap();
        assert!((uniformity_estimate(&h, &q) - d.n() as f64).abs() < 1e-9);
    }

    #[test]
    fn workload_weights_cases() {
        let h = histogram_2x2([1.0, 2.0, 3.0, 4.0]);
        let ladder = SizeLadder::new(50.0, 50.0, 1).unwrap();
        let aug = augment(&h, &ladder);

        let empty = workload_weights(&aug, &[]);
        assert_eq!(empty.weights[0], vec![0, 0, 0, 0]);

        let one = workload_weights(
            &aug,
            &[RangeQuery::new(PlanarPoint::new(0.0, 0.0), 50.0).unwrap()],
        );
        assert_eq!(one.weights[0], vec![1, 0, 0, 0]);

        let center = workload_weights(
            &aug,
            &[RangeQuery::new(PlanarPoint::new(25.0, 25.0), 50.0).unwrap()],
        );
        assert_eq!(center.weights[0], vec![1, 1, 1, 1]);
    }

    #[test]
    fn edge_touching_does_not_count_as_intersection() {
        let h = histogram_2x2([0.0; 4]);
        let ladder = SizeLadder::new(50.0, 50.0, 1).unwrap();
        let aug = augment(&h, &ladder);
        // touches the (50,0) training query along x = 50 only
        let touching = workload_weights(
            &aug,
            &[RangeQuery::new(PlanarPoint::new(0.0, 0.0), 50.0).unwrap()],
        );
        assert_eq!(touching.weights[0][1], 0);
    }

    #[test]
    fn bucketed_weights_match_direct_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let h = NoisyHistogram {
            grid: Grid::new(region(100.0), 17.0).unwrap(),
            answers: vec![0.0; 36],
            epsilon: 1.0,
            n: 0,
        };
        let ladder = SizeLadder::new(5.0, 60.0, 3).unwrap();
        let aug = augment(&h, &ladder);
        let workload: Vec<RangeQuery> = (0..200)
            .map(|_| {
                RangeQuery::new(
                    PlanarPoint::new(
                        rng.random_range(-20.0..110.0),
                        rng.random_range(-20.0..110.0),
                    ),
                    rng.random_range(1.0..60.0),
                )
                .unwrap()
            })
            .collect();
        let fast = workload_weights(&aug, &workload);
        for (si, &r) in aug.sizes.iter().enumerate() {
            for (ci, &c) in aug.corners.iter().enumerate() {
                let tq = RangeQuery { corner: c, side: r };
                let direct = workload
                    .iter()
                    .filter(|q| overlap_area(&tq, q) > 0.0)
                    .count() as u32;
                assert_eq!(fast.weights[si][ci], direct, "size {si} corner {ci}");
            }
        }
    }

    #[test]
    fn csv_export_has_expected_shape() {
        let h = histogram_2x2([1.0, 2.0, 3.0, 4.0]);
        let ladder = SizeLadder::new(50.0, 50.0, 1).unwrap();
        let aug = augment(&h, &ladder);
        let weights = WorkloadWeights::uniform(&aug);
        let mut buf = Vec::new();
        export_csv(&aug, &weights, 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("cx,cy,r,label,weight\n"));
        assert_eq!(text.lines().count(), 5);
    }

    proptest! {
        #[test]
        fn labels_match_brute_force_oracle(
            m in 1..8usize,
            rho in 5.0..40.0f64,
            r in 1.0..120.0f64,
            seed in 0u64..1000,
        ) {
            let side = m as f64 * rho;
            let reg = region(side);
            let grid = Grid::new(reg, rho).unwrap();
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let answers: Vec<f64> = (0..grid.num_cells())
                .map(|_| rng.random_range(-10.0..10.0))
                .collect();
            let h = NoisyHistogram { grid, answers, epsilon: 1.0, n: 0 };
            // ceil(side/rho) can exceed m by one when side = m*rho rounds up
            let mm = grid.cells_per_side;
            for &c in &grid.corners() {
                let q = RangeQuery { corner: c, side: r };
                // brute force over every cell with plain rectangle intersection
                let mut expect = 0.0;
                for row in 0..mm {
                    for col in 0..mm {
                        let cell = RangeQuery { corner: grid.corner(row, col), side: rho };
                        expect += overlap_area(&q, &cell) / (rho * rho)
                            * h.answers[grid.index(row, col)];
                    }
                }
                let got = uniformity_estimate(&h, &q);
                let tol = 1e-9 * expect.abs().max(1.0);
                prop_assert!((got - expect).abs() <= tol, "got {} expect {}", got, expect);
            }
        }

        #[test]
        fn coefficients_bounded_and_area_consistent(
            m in 1..6usize,
            rho in 5.0..30.0f64,
            r in 1.0..100.0f64,
            cx in -50.0..150.0f64,
            cy in -50.0..150.0f64,
        ) {
            let side = m as f64 * rho;
            let grid = Grid::new(region(side), rho).unwrap();
            let q = RangeQuery::new(PlanarPoint::new(cx, cy), r).unwrap();
            let mut coeff_area_sum = 0.0;
            for row in 0..m {
                for col in 0..m {
                    let cell = RangeQuery { corner: grid.corner(row, col), side: rho };
                    let frac = overlap_area(&q, &cell) / (rho * rho);
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&frac));
                    coeff_area_sum += frac * rho * rho;
                }
            }
            // sum of coefficient areas equals |q ∩ grid extent|
            let extent = RangeQuery::new(PlanarPoint::new(0.0, 0.0), side).unwrap();
            let expect = overlap_area(&q, &extent);
            prop_assert!((coeff_area_sum - expect).abs() < 1e-6 * expect.max(1.0));
        }

        #[test]
        fn labels_monotone_in_size_for_nonnegative_counts(
            m in 2..6usize,
            seed in 0u64..1000,
        ) {
            let rho = 20.0;
            let side = m as f64 * rho;
            let grid = Grid::new(region(side), rho).unwrap();
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let answers: Vec<f64> = (0..grid.num_cells())
                .map(|_| rng.random_range(0.0..10.0))
                .collect();
            let h = NoisyHistogram { grid, answers, epsilon: 1.0, n: 0 };
            let ladder = SizeLadder::new(5.0, side, 5).unwrap();
            let aug = augment(&h, &ladder);
            for ci in 0..aug.corners.len() {
                for si in 1..aug.sizes.len() {
                    prop_assert!(aug.labels[si][ci] >= aug.labels[si - 1][ci] - 1e-9);
                }
            }
        }
    }
}
