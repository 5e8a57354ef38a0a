//! Learned grid-width selection from public data.
//!
//! Features are `(n, epsilon, 1/(n*eps), 1/sqrt(n*eps), entropy)` where the
//! entropy comes from a public surrogate dataset over the same region and `n`
//! is the sensitive dataset's cardinality. Labels are found by an empirical
//! sweep of SNH over candidate grid widths on public data, and a bank of
//! extremely randomized regression trees maps features to a width. Nothing
//! in this module touches the sensitive points, so it spends zero budget.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::eval::{evaluate, Workload};
use crate::geo::PlanarDataset;
use crate::model::{fit, FitConfig, ModelError};

/// Grid resolution for the entropy feature.
pub const ENTROPY_GRID: usize = 100;

/// Format version for serialized selector models.
pub const PARAMSELECT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamSelectError {
    #[error("entropy requires a nonempty dataset")]
    EmptyDataset,
    #[error("entropy grid resolution must be >= 1")]
    BadResolution,
    #[error("need at least {need} training samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("empirical search fit failed at rho={rho}: {source}")]
    SearchFit { rho: f64, source: ModelError },
    #[error("model file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file corrupt: {0}")]
    Corrupt(String),
    #[error("samples csv line {line}: {reason}")]
    BadCsvRow { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shannon entropy (nats) of the occupancy distribution over a `g x g`
/// equi-width partition of the dataset's region.
pub fn entropy(d: &PlanarDataset, g: usize) -> Result<f64, ParamSelectError> {
    if d.n() == 0 {
        return Err(ParamSelectError::EmptyDataset);
    }
    if g == 0 {
        return Err(ParamSelectError::BadResolution);
    }
    let side = d.region().side;
    let cell = side / g as f64;
    let mut counts = vec![0u64; g * g];
    for p in d.points() {
        let col = ((p.x / cell) as usize).min(g - 1);
        let row = ((p.y / cell) as usize).min(g - 1);
        counts[row * g + col] += 1;
    }
    let n = d.n() as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// The selector's input features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub n: usize,
    pub epsilon: f64,
    pub inv_ne: f64,
    pub inv_sqrt_ne: f64,
    pub entropy: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.n as f64,
            self.epsilon,
            self.inv_ne,
            self.inv_sqrt_ne,
            self.entropy,
        ]
    }
}

pub const FEATURE_NAMES: [&str; 5] = ["n", "epsilon", "inv_ne", "inv_sqrt_ne", "entropy"];

/// Extracts features for a sensitive dataset of cardinality `n` using the
/// public surrogate `d_star` only for the entropy term.
pub fn features(
    d_star: &PlanarDataset,
    n: usize,
    epsilon: f64,
) -> Result<FeatureVector, ParamSelectError> {
    assert!(n > 0 && epsilon > 0.0);
    let ne = n as f64 * epsilon;
    Ok(FeatureVector {
        n,
        epsilon,
        inv_ne: 1.0 / ne,
        inv_sqrt_ne: 1.0 / ne.sqrt(),
        entropy: entropy(d_star, ENTROPY_GRID)?,
    })
}

/// One training record: features plus the empirically best grid width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSample {
    pub features: FeatureVector,
    pub label: f64,
}

/// Writes samples as `n,epsilon,inv_ne,inv_sqrt_ne,entropy,rho_label`.
pub fn write_samples_csv<W: Write>(samples: &[ParamSample], mut out: W) -> Result<(), ParamSelectError> {
    writeln!(out, "n,epsilon,inv_ne,inv_sqrt_ne,entropy,rho_label")?;
    for s in samples {
        let f = s.features;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f.n, f.epsilon, f.inv_ne, f.inv_sqrt_ne, f.entropy, s.label
        )?;
    }
    Ok(())
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<ParamSample>, ParamSelectError> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(ParamSelectError::BadCsvRow {
                line: i + 1,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse = |idx: usize| -> Result<f64, ParamSelectError> {
            fields[idx]
                .trim()
                .parse::<f64>()
                .map_err(|e| ParamSelectError::BadCsvRow {
                    line: i + 1,
                    reason: e.to_string(),
                })
        };
        samples.push(ParamSample {
            features: FeatureVector {
                n: parse(0)? as usize,
                epsilon: parse(1)?,
                inv_ne: parse(2)?,
                inv_sqrt_ne: parse(3)?,
                entropy: parse(4)?,
            },
            label: parse(5)?,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: &[f64; 5]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Extremely randomized regression trees: each tree sees the full sample set
/// and split thresholds are drawn uniformly between per-node feature bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    trees: Vec<Node>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    label_min: f64,
    label_max: f64,
}

fn variance(labels: &[f64], indices: &[usize]) -> f64 {
    let n = indices.len() as f64;
    let mean = indices.iter().map(|&i| labels[i]).sum::<f64>() / n;
    indices
        .iter()
        .map(|&i| (labels[i] - mean).powi(2))
        .sum::<f64>()
        / n
}

fn build_node(
    xs: &[[f64; 5]],
    labels: &[f64],
    indices: &[usize],
    depth: usize,
    max_depth: usize,
    rng: &mut ChaCha12Rng,
) -> Node {
    let mean = indices.iter().map(|&i| labels[i]).sum::<f64>() / indices.len() as f64;
    if depth >= max_depth || indices.len() < 2 {
        return Node::Leaf(mean);
    }
    let total_var = variance(labels, indices);
    if total_var == 0.0 {
        return Node::Leaf(mean);
    }
    // one uniform threshold per feature, keep the best variance reduction
    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..5 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in indices {
            lo = lo.min(xs[i][feature]);
            hi = hi.max(xs[i][feature]);
        }
        if !(hi > lo) {
            continue;
        }
        let threshold = rng.random_range(lo..hi);
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        for &i in indices {
            if xs[i][feature] <= threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        if left.is_empty() || right.is_empty() {
            continue;
        }
        let nl = left.len() as f64;
        let nr = right.len() as f64;
        let score = total_var
            - (nl * variance(labels, &left) + nr * variance(labels, &right)) / (nl + nr);
        if best.map_or(true, |(_, _, s)| score > s) {
            best = Some((feature, threshold, score));
        }
    }
    match best {
        None => Node::Leaf(mean),
        Some((feature, threshold, _)) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                indices.iter().partition(|&&i| xs[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(build_node(xs, labels, &left_idx, depth + 1, max_depth, rng)),
                right: Box::new(build_node(xs, labels, &right_idx, depth + 1, max_depth, rng)),
            }
        }
    }
}

/// Fits the ensemble; deterministic under the seed.
pub fn fit_ensemble(
    samples: &[ParamSample],
    n_trees: usize,
    max_depth: usize,
    seed: u64,
) -> Result<TreeEnsemble, ParamSelectError> {
    if samples.len() < 2 {
        return Err(ParamSelectError::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let xs: Vec<[f64; 5]> = samples.iter().map(|s| s.features.as_array()).collect();
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let indices: Vec<usize> = (0..samples.len()).collect();
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "tree", t as u64));
            build_node(&xs, &labels, &indices, 0, max_depth, &mut rng)
        })
        .collect();
    Ok(TreeEnsemble {
        trees,
        n_trees,
        max_depth,
        seed,
        label_min: labels.iter().cloned().fold(f64::INFINITY, f64::min),
        label_max: labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

impl TreeEnsemble {
    /// Mean prediction over the trees; always within the training label range.
    pub fn predict(&self, features: &FeatureVector) -> f64 {
        let x = features.as_array();
        self.trees.iter().map(|t| t.predict(&x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn label_range(&self) -> (f64, f64) {
        (self.label_min, self.label_max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "version": PARAMSELECT_FORMAT_VERSION,
            "feature_names": FEATURE_NAMES,
            "model": self,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, ParamSelectError> {
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ParamSelectError::Corrupt("missing version".into()))?
            as u32;
        if version != PARAMSELECT_FORMAT_VERSION {
            return Err(ParamSelectError::VersionMismatch {
                found: version,
                expected: PARAMSELECT_FORMAT_VERSION,
            });
        }
        serde_json::from_value(
            value
                .get("model")
                .cloned()
                .ok_or_else(|| ParamSelectError::Corrupt("missing model".into()))?,
        )
        .map_err(|e| ParamSelectError::Corrupt(e.to_string()))
    }
}

/// Predicts a grid width for a sensitive dataset from its public surrogate.
///
/// Spends zero privacy budget: only `d_star` (public) and the released
/// cardinality `n` are consulted.
pub fn predict_rho(
    model: &TreeEnsemble,
    d_star: &PlanarDataset,
    n: usize,
    epsilon: f64,
) -> Result<f64, ParamSelectError> {
    Ok(model.predict(&features(d_star, n, epsilon)?))
}

/// Default candidate widths for empirical search: 16 geometric steps from
/// `side/512` to `side/8`.
pub fn geometric_rho_ladder(side: f64) -> Vec<f64> {
    let steps = 16usize;
    let lo = side / 512.0;
    let hi = side / 8.0;
    let ratio = (hi / lo).powf(1.0 / (steps - 1) as f64);
    (0..steps).map(|i| lo * ratio.powi(i as i32)).collect()
}

/// How SNH is configured during the empirical width search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub base: FitConfig,
    pub seeds: Vec<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let mut base = FitConfig::default();
        // search runs many fits; keep each one light
        base.k = 2;
        base.train.depth = 3;
        base.train.width = 16;
        base.train.epochs = 300;
        Self {
            base,
            seeds: vec![0],
        }
    }
}

/// Runs SNH at every candidate width on public data and returns the width
/// with the lowest seed-averaged median relative error; ties break toward
/// the smaller width.
pub fn empirical_best_rho(
    d_public: &PlanarDataset,
    epsilon: f64,
    candidates: &[f64],
    workload: &Workload,
    cfg: &SearchConfig,
) -> Result<f64, ParamSelectError> {
    if candidates.is_empty() {
        return Err(ParamSelectError::NoCandidates);
    }
    let mut best: Option<(f64, f64)> = None; // (rho, score)
    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &rho in &sorted {
        let mut total = 0.0;
        for &seed in &cfg.seeds {
            let fit_cfg = FitConfig {
                epsilon,
                rho,
                seed,
                ..cfg.base.clone()
            };
            let d = d_public.fresh_audit();
            let (model, _) = fit(&d, &fit_cfg, &workload.queries)
                .map_err(|source| ParamSelectError::SearchFit { rho, source })?;
            let report = evaluate(&model, workload, d_public, None);
            total += report.median;
        }
        let score = total / cfg.seeds.len() as f64;
        // strict improvement keeps the smaller rho on ties
        if best.map_or(true, |(_, s)| score < s) {
            best = Some((rho, score));
        }
    }
    Ok(best.unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{gen_uniform, gen_workload};
    use crate::geo::{GeoPoint, PlanarPoint, Region};

    fn region(side: f64) -> Region {
        Region::new(GeoPoint::new(0.0, 0.0).unwrap(), side).unwrap()
    }

    #[test]
    fn entropy_single_cell_is_zero() {
        let d = PlanarDataset::from_planar(vec![PlanarPoint::new(1.0, 1.0); 20], region(100.0));
        assert_eq!(entropy(&d, 2).unwrap(), 0.0);
    }

    #[test]
    fn entropy_uniform_four_cells_is_ln4() {
        let pts = vec![
            PlanarPoint::new(10.0, 10.0),
            PlanarPoint::new(60.0, 10.0),
            PlanarPoint::new(10.0, 60.0),
            PlanarPoint::new(60.0, 60.0),
        ];
        let d = PlanarDataset::from_planar(pts, region(100.0));
        assert!((entropy(&d, 2).unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_skewed_two_cells() {
        let mut pts = vec![PlanarPoint::new(10.0, 10.0); 3];
        pts.push(PlanarPoint::new(60.0, 10.0));
        let d = PlanarDataset::from_planar(pts, region(100.0));
        let h = entropy(&d, 2).unwrap();
        let expect = -0.75f64 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn entropy_rejects_empty_dataset() {
        let d = PlanarDataset::from_planar(vec![], region(100.0));
        assert!(matches!(entropy(&d, 2), Err(ParamSelectError::EmptyDataset)));
    }

    #[test]
    fn feature_arithmetic_and_exchangeability() {
        let d_star = gen_uniform(1000, region(100.0), 3);
        let f = features(&d_star, 100_000, 0.2).unwrap();
        assert!((f.inv_ne - 5.0e-5).abs() < 1e-18);
        assert!((f.inv_sqrt_ne - 7.0710678e-3).abs() < 1e-9);
        // n halved and epsilon doubled leave the products unchanged
        let g = features(&d_star, 50_000, 0.4).unwrap();
        assert_eq!(f.inv_ne, g.inv_ne);
        assert_eq!(f.inv_sqrt_ne, g.inv_sqrt_ne);
        assert_eq!(f.entropy, g.entropy);
        // same surrogate twice gives identical entropy
        assert_eq!(
            features(&d_star, 100_000, 0.2).unwrap().entropy,
            f.entropy
        );
    }

    fn synthetic_samples(count: usize, seed: u64) -> Vec<ParamSample> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let n = rng.random_range(10_000..500_000usize);
                let epsilon = rng.random_range(0.05..0.8f64);
                let ne = n as f64 * epsilon;
                let h = rng.random_range(2.0..7.0f64);
                // smooth planted relationship plus noise
                let label = 40.0 / ne.sqrt() * 1000.0 + 10.0 * h + rng.random_range(-5.0..5.0);
                ParamSample {
                    features: FeatureVector {
                        n,
                        epsilon,
                        inv_ne: 1.0 / ne,
                        inv_sqrt_ne: 1.0 / ne.sqrt(),
                        entropy: h,
                    },
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn constant_labels_predict_constant() {
        let mut samples = synthetic_samples(10, 1);
        for s in &mut samples {
            s.label = 77.0;
        }
        let model = fit_ensemble(&samples, 25, 4, 0).unwrap();
        for s in &samples {
            assert_eq!(model.predict(&s.features), 77.0);
        }
    }

    #[test]
    fn predictions_stay_within_label_range() {
        let samples = synthetic_samples(45, 2);
        let model = fit_ensemble(&samples, 150, 7, 9).unwrap();
        let (lo, hi) = model.label_range();
        let probes = synthetic_samples(100, 3);
        for p in &probes {
            let pred = model.predict(&p.features);
            assert!(pred >= lo - 1e-9 && pred <= hi + 1e-9, "{pred} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn ensemble_beats_constant_mean_on_training_mae() {
        let samples = synthetic_samples(45, 4);
        let model = fit_ensemble(&samples, 150, 7, 5).unwrap();
        let mean = samples.iter().map(|s| s.label).sum::<f64>() / samples.len() as f64;
        let mae_model: f64 = samples
            .iter()
            .map(|s| (model.predict(&s.features) - s.label).abs())
            .sum::<f64>()
            / samples.len() as f64;
        let mae_const: f64 = samples
            .iter()
            .map(|s| (mean - s.label).abs())
            .sum::<f64>()
            / samples.len() as f64;
        assert!(mae_model < mae_const, "{mae_model} !< {mae_const}");
    }

    #[test]
    fn ensemble_is_deterministic_under_seed() {
        let samples = synthetic_samples(30, 6);
        let a = fit_ensemble(&samples, 50, 7, 11).unwrap();
        let b = fit_ensemble(&samples, 50, 7, 11).unwrap();
        assert_eq!(a, b);
        let probe = synthetic_samples(1, 7)[0];
        assert_eq!(a.predict(&probe.features), b.predict(&probe.features));
    }

    #[test]
    fn model_json_round_trip_and_version_check() {
        let samples = synthetic_samples(20, 8);
        let model = fit_ensemble(&samples, 20, 5, 1).unwrap();
        let json = model.to_json();
        let back = TreeEnsemble::from_json(&json).unwrap();
        assert_eq!(back, model);
        let mut bad = json.clone();
        bad["version"] = serde_json::json!(9);
        assert!(matches!(
            TreeEnsemble::from_json(&bad),
            Err(ParamSelectError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn samples_csv_round_trip() {
        let samples = synthetic_samples(7, 10);
        let mut buf = Vec::new();
        write_samples_csv(&samples, &mut buf).unwrap();
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.features.n, b.features.n);
            assert!((a.label - b.label).abs() < 1e-9);
        }
    }

    #[test]
    fn single_candidate_search_returns_it() {
        let reg = region(800.0);
        let d = gen_uniform(2000, reg, 1);
        let workload = gen_workload(&reg, 50, 25.0, 100.0, 2);
        let mut cfg = SearchConfig::default();
        cfg.base.k = 1;
        cfg.base.train.epochs = 30;
        let rho = empirical_best_rho(&d, 0.5, &[100.0], &workload, &cfg).unwrap();
        assert_eq!(rho, 100.0);
    }

    #[test]
    fn search_is_candidate_order_invariant() {
        let reg = region(800.0);
        let d = gen_uniform(3000, reg, 5);
        let workload = gen_workload(&reg, 60, 25.0, 100.0, 6);
        let mut cfg = SearchConfig::default();
        cfg.base.k = 1;
        cfg.base.train.epochs = 50;
        let a = empirical_best_rho(&d, 0.4, &[50.0, 100.0, 200.0], &workload, &cfg).unwrap();
        let b = empirical_best_rho(&d, 0.4, &[200.0, 50.0, 100.0], &workload, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn geometric_ladder_spans_stated_range() {
        let ladder = geometric_rho_ladder(20_000.0);
        assert_eq!(ladder.len(), 16);
        assert!((ladder[0] - 20_000.0 / 512.0).abs() < 1e-9);
        assert!((ladder[15] - 20_000.0 / 8.0).abs() < 1e-6);
        for w in ladder.windows(2) {
            assert!(w[1] > w[0]);
        }
    }
}
