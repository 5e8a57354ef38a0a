//! Python bindings for the core pipeline: build or load datasets, fit the
//! private model bank, answer range-count queries, and run the uniform-grid
//! baseline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use snh_core::baselines::{ug_granularity, GridAnswerer, UG_CONSTANT};
use snh_core::dp::collect;
use snh_core::eval::{gen_mixture, gen_uniform, random_mixture_components};
use snh_core::geo::{self, GeoPoint, PlanarDataset, PlanarPoint, RangeQuery, Region};
use snh_core::model::{fit, FitConfig, ScalingMode, SnhModel};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn query(cx: f64, cy: f64, r: f64) -> PyResult<RangeQuery> {
    RangeQuery::new(PlanarPoint::new(cx, cy), r).map_err(value_err)
}

/// A square region on the ground, meters, centered on a lat/lon point.
#[pyclass(name = "Region", from_py_object)]
#[derive(Clone)]
struct PyRegion {
    inner: Region,
}

#[pymethods]
impl PyRegion {
    #[new]
    fn new(center_lat: f64, center_lon: f64, side: f64) -> PyResult<Self> {
        let center = GeoPoint::new(center_lat, center_lon).map_err(value_err)?;
        Ok(Self {
            inner: Region::new(center, side).map_err(value_err)?,
        })
    }

    #[getter]
    fn side(&self) -> f64 {
        self.inner.side
    }

    fn __repr__(&self) -> String {
        format!(
            "Region(center_lat={}, center_lon={}, side={})",
            self.inner.center.lat, self.inner.center.lon, self.inner.side
        )
    }
}

/// Projected point dataset with an access audit attached.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: PlanarDataset,
}

#[pymethods]
impl PyDataset {
    /// Builds a dataset from planar (x, y) pairs in meters.
    #[staticmethod]
    fn from_points(points: Vec<(f64, f64)>, region: PyRegion) -> Self {
        let pts = points
            .into_iter()
            .map(|(x, y)| PlanarPoint::new(x, y))
            .collect();
        Self {
            inner: PlanarDataset::from_planar(pts, region.inner),
        }
    }

    #[staticmethod]
    fn uniform(n: usize, region: PyRegion, seed: u64) -> Self {
        Self {
            inner: gen_uniform(n, region.inner, seed),
        }
    }

    #[staticmethod]
    fn gaussian_mixture(
        n: usize,
        region: PyRegion,
        components: usize,
        sigma: f64,
        seed: u64,
    ) -> Self {
        let comps = random_mixture_components(&region.inner, components, sigma, seed);
        Self {
            inner: gen_mixture(n, region.inner, &comps, seed.wrapping_add(1)),
        }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn region(&self) -> PyRegion {
        PyRegion {
            inner: *self.inner.region(),
        }
    }

    /// Exact count inside a query; evaluation-only, bypasses the audit.
    fn true_count(&self, cx: f64, cy: f64, r: f64) -> PyResult<u64> {
        Ok(geo::true_count(&self.inner, &query(cx, cy, r)?))
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

/// Trained model bank answering unlimited queries under the spent budget.
#[pyclass(name = "Model")]
struct PyModel {
    inner: SnhModel,
}

#[pymethods]
impl PyModel {
    fn answer(&self, cx: f64, cy: f64, r: f64) -> PyResult<f64> {
        Ok(self.inner.answer(&query(cx, cy, r)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(runtime_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SnhModel::load(&path).map_err(runtime_err)?,
        })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.meta.epsilon
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.meta.rho
    }

    #[getter]
    fn sizes(&self) -> Vec<f64> {
        self.inner.ladder.sizes().to_vec()
    }
}

/// Uniform-grid baseline answering straight off a noisy histogram.
#[pyclass(name = "GridBaseline")]
struct PyGridBaseline {
    inner: GridAnswerer,
}

#[pymethods]
impl PyGridBaseline {
    fn answer(&self, cx: f64, cy: f64, r: f64) -> PyResult<f64> {
        Ok(self.inner.answer(&query(cx, cy, r)?))
    }

    #[getter]
    fn cells_per_side(&self) -> usize {
        self.inner.histogram.grid.cells_per_side
    }
}

/// Sanitizes the dataset once and trains the model bank.
///
/// Returns `(model, audit)` where `audit` is a dict with `point_reads`,
/// `post_collection_reads`, and `compliant`.
#[pyfunction]
#[pyo3(signature = (dataset, epsilon=0.2, rho=100.0, l=25.0, u=100.0, k=8,
                    depth=20, width=80, epochs=2000, seed=0, scaling="area"))]
#[allow(clippy::too_many_arguments)]
fn fit_model(
    py: Python<'_>,
    dataset: &PyDataset,
    epsilon: f64,
    rho: f64,
    l: f64,
    u: f64,
    k: usize,
    depth: usize,
    width: usize,
    epochs: usize,
    seed: u64,
    scaling: &str,
) -> PyResult<(PyModel, Py<pyo3::types::PyDict>)> {
    let scaling = match scaling {
        "area" => ScalingMode::Area,
        "linear" => ScalingMode::Linear,
        other => return Err(value_err(format!("scaling must be area or linear, got {other:?}"))),
    };
    let mut cfg = FitConfig {
        epsilon,
        rho,
        ladder_l: l,
        ladder_u: u,
        k,
        scaling,
        seed,
        ..FitConfig::default()
    };
    cfg.train.depth = depth;
    cfg.train.width = width;
    cfg.train.epochs = epochs;
    let d = dataset.inner.fresh_audit();
    let (model, audit) = py
        .detach(|| fit(&d, &cfg, &[]))
        .map_err(runtime_err)?;
    let audit_dict = pyo3::types::PyDict::new(py);
    audit_dict.set_item("point_reads", audit.point_reads)?;
    audit_dict.set_item("post_collection_reads", audit.post_collection_reads)?;
    audit_dict.set_item("compliant", audit.is_compliant())?;
    Ok((PyModel { inner: model }, audit_dict.unbind()))
}

/// Fits the uniform-grid baseline at `m = max(1, round(sqrt(n*eps/10)))`.
#[pyfunction]
#[pyo3(signature = (dataset, epsilon, seed=0))]
fn fit_grid_baseline(dataset: &PyDataset, epsilon: f64, seed: u64) -> PyResult<PyGridBaseline> {
    let m = ug_granularity(dataset.inner.n(), epsilon, UG_CONSTANT);
    let rho = dataset.inner.region().side / m as f64;
    let d = dataset.inner.fresh_audit();
    let hist = collect(&d, rho, epsilon, seed).map_err(runtime_err)?;
    Ok(PyGridBaseline {
        inner: GridAnswerer::new(hist),
    })
}

/// Smoothed relative error `|y - truth| / max(truth, psi)`.
#[pyfunction]
fn relative_error(y: f64, truth: f64, psi: f64) -> PyResult<f64> {
    if psi <= 0.0 {
        return Err(value_err("psi must be positive"));
    }
    Ok(geo::relative_error(y, truth, psi))
}

#[pymodule]
fn snh(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRegion>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGridBaseline>()?;
    m.add_function(wrap_pyfunction!(fit_model, m)?)?;
    m.add_function(wrap_pyfunction!(fit_grid_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    Ok(())
}
