//! Uniform-grid baselines: noisy grid answering at any width, plus the
//! `m = sqrt(n * epsilon / c)` granularity rule.

use crate::augment::uniformity_estimate;
use crate::dp::NoisyHistogram;
use crate::geo::RangeQuery;

/// Cells per side for the uniform-grid baseline, `max(1, round(sqrt(n*eps/c)))`.
pub fn ug_granularity(n: usize, epsilon: f64, c: f64) -> usize {
    assert!(n > 0 && epsilon > 0.0 && c > 0.0);
    ((n as f64 * epsilon / c).sqrt().round() as usize).max(1)
}

/// Default constant in the uniform-grid rule.
pub const UG_CONSTANT: f64 = 10.0;

/// Answers queries straight off a noisy grid with the uniformity assumption.
#[derive(Debug, Clone)]
pub struct GridAnswerer {
    pub histogram: NoisyHistogram,
}

impl GridAnswerer {
    pub fn new(histogram: NoisyHistogram) -> Self {
        Self { histogram }
    }

    /// Overlap-weighted sum of noisy cell counts, clamped to be nonnegative.
    ///
    /// Shares the overlap kernel with data augmentation, so an aligned query
    /// of cell size returns exactly the cell's (clamped) noisy count.
    pub fn answer(&self, q: &RangeQuery) -> f64 {
        uniformity_estimate(&self.histogram, q).max(0.0)
    }

    /// Pre-clamp estimate, for tests that share fixtures with augmentation.
    pub fn answer_unclamped(&self, q: &RangeQuery) -> f64 {
        uniformity_estimate(&self.histogram, q)
    }
}
