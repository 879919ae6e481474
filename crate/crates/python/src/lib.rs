//! Python bindings: panels, adjacency graphs, model fitting, risk summaries
//! and the simulation harness.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use dlnmlps::artifact::FitArtifact;
use dlnmlps::basis::{bspline_eval, equidistant_knots};
use dlnmlps::panel::{ingest_panel, PanelData};
use dlnmlps::posterior::{Posterior, RiskGrid, RiskPoint};
use dlnmlps::sim::{replicate_seed, run_replicate, ReplicateResult};
use dlnmlps::spatial::{load_adjacency_file, structure_matrix, AdjacencyGraph, SpatialKind};
use dlnmlps::{FitOptions, LatentFit, ModelConfig, ModelSpec};
use dlnmlps_cli::{sim_setup, RunConfig};

fn py_err(e: dlnmlps::Error) -> PyErr {
    match e {
        dlnmlps::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn cli_err(e: dlnmlps_cli::CliError) -> PyErr {
    match e {
        dlnmlps_cli::CliError::Core(c) => py_err(c),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A validated panel of unit time series.
#[pyclass(name = "Panel", module = "dlnmlps")]
pub struct PyPanel {
    inner: PanelData,
}

#[pymethods]
impl PyPanel {
    /// Reads a panel CSV (`unit_id, t_index, y, exposure[, offset_population, date, ...]`).
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self { inner: ingest_panel(path).map_err(py_err)? })
    }

    #[getter]
    fn n_units(&self) -> usize {
        self.inner.n_units()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn unit_ids(&self) -> Vec<String> {
        self.inner.units.iter().map(|u| u.unit_id.clone()).collect()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    fn exposure_range(&self) -> Option<(f64, f64)> {
        self.inner.exposure_range()
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    fn __repr__(&self) -> String {
        format!("Panel({})", self.inner.summary())
    }
}

/// Undirected adjacency graph over areas.
#[pyclass(name = "Graph", module = "dlnmlps")]
pub struct PyGraph {
    inner: AdjacencyGraph,
}

#[pymethods]
impl PyGraph {
    /// Rook adjacency on a `rows x cols` lattice.
    #[staticmethod]
    fn grid(rows: usize, cols: usize) -> Self {
        Self { inner: AdjacencyGraph::grid(rows, cols) }
    }

    /// From 0-based undirected edges.
    #[staticmethod]
    fn from_edges(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self { inner: AdjacencyGraph::from_edges(n, &edges).map_err(py_err)? })
    }

    /// Reads a `J <n>` header followed by 1-based `j h` edge lines.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_adjacency_file(path).map_err(py_err)?.graph })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    fn neighbors(&self, j: usize) -> PyResult<Vec<usize>> {
        if j >= self.inner.n_nodes() {
            return Err(PyValueError::new_err(format!("node {j} out of range")));
        }
        Ok(self.inner.neighbors(j).to_vec())
    }

    /// Log pseudo-determinant of the graph Laplacian.
    fn log_pseudo_det(&self) -> f64 {
        structure_matrix(&self.inner).log_pseudo_det()
    }

    fn to_edge_list(&self) -> String {
        self.inner.to_edge_list()
    }
}

fn point_tuple(p: &RiskPoint) -> (f64, f64, f64, f64) {
    (p.x, p.rr, p.lo, p.hi)
}

/// A fitted model: posterior mode, Gaussian approximation and hyperparameters.
#[pyclass(name = "Fit", module = "dlnmlps")]
pub struct PyFit {
    inner: LatentFit,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn hypers(&self) -> BTreeMap<String, f64> {
        self.inner.natural_hypers().into_iter().collect()
    }

    #[getter]
    fn log_posterior(&self) -> f64 {
        self.inner.logpost
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged && self.inner.hyper_converged
    }

    #[getter]
    fn hyper_evaluations(&self) -> usize {
        self.inner.hyper_evals
    }

    #[getter]
    fn fixed_effects(&self) -> BTreeMap<String, f64> {
        self.inner.fixed_names.iter().cloned().zip(self.inner.xi.iter().copied()).collect()
    }

    #[getter]
    fn unit_ids(&self) -> Vec<String> {
        self.inner.unit_ids.clone()
    }

    #[getter]
    fn exposure_domain(&self) -> (f64, f64) {
        (self.inner.basis.exposure.lo, self.inner.basis.exposure.hi)
    }

    /// Overall (lag-cumulated) relative risks as `(x, rr, lo, hi)` rows.
    #[pyo3(signature = (x, x0, level = 0.95))]
    fn rr_overall(&self, x: Vec<f64>, x0: f64, level: f64) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let post = Posterior::new(&self.inner).map_err(py_err)?;
        let pts = post.rr_overall(&RiskGrid::new(x, x0), level).map_err(py_err)?;
        Ok(pts.iter().map(point_tuple).collect())
    }

    /// Lag-specific relative risks as `(x, rr, lo, hi)` rows.
    #[pyo3(signature = (x, lag, x0, level = 0.95))]
    fn rr_lag(&self, x: Vec<f64>, lag: usize, x0: f64, level: f64) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let post = Posterior::new(&self.inner).map_err(py_err)?;
        let pts = post.rr_lag(&RiskGrid::new(x, x0), lag, level).map_err(py_err)?;
        Ok(pts.iter().map(point_tuple).collect())
    }

    /// Posterior probability that the overall RR exceeds `threshold`.
    #[pyo3(signature = (x, x0, threshold = 1.0, draws = 10000, seed = 1))]
    fn exceedance(&self, x: Vec<f64>, x0: f64, threshold: f64, draws: usize, seed: u64) -> PyResult<Vec<f64>> {
        let post = Posterior::new(&self.inner).map_err(py_err)?;
        let d = post.draw_latent(draws, seed);
        post.exceedance_rr(&RiskGrid::new(x, x0), threshold, &d).map_err(py_err)
    }

    /// Area effects as `{unit_id: (mean, lo, hi)}`.
    #[pyo3(signature = (level = 0.95))]
    fn random_effects(&self, level: f64) -> PyResult<BTreeMap<String, (f64, f64, f64)>> {
        let post = Posterior::new(&self.inner).map_err(py_err)?;
        let s = post.random_effect_summary(level).map_err(py_err)?;
        Ok(s.into_iter().map(|(id, e)| (id, (e.mean, e.lo, e.hi))).collect())
    }

    /// Schema-versioned JSON artifact.
    #[pyo3(signature = (config_hash = String::new(), master_seed = 0))]
    fn to_json(&self, config_hash: String, master_seed: u64) -> PyResult<String> {
        let a = FitArtifact::new(&self.inner, serde_json::Value::Null, config_hash, master_seed);
        let mut buf = Vec::new();
        a.write(&mut buf).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let a = FitArtifact::read(text.as_bytes()).map_err(py_err)?;
        Ok(Self { inner: a.to_fit().map_err(py_err)? })
    }
}

/// Fits a penalized DLNM with optional spatial random effects.
#[pyfunction]
#[pyo3(signature = (panel, graph = None, spatial = "none", v_x = 10, v_l = 10, max_lag = 7, degree = 3, ridge = true, exposure_range = None))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    panel: &PyPanel,
    graph: Option<&PyGraph>,
    spatial: &str,
    v_x: usize,
    v_l: usize,
    max_lag: usize,
    degree: usize,
    ridge: bool,
    exposure_range: Option<(f64, f64)>,
) -> PyResult<PyFit> {
    let cfg = ModelConfig {
        v_x,
        v_l,
        max_lag,
        degree,
        ridge,
        spatial: SpatialKind::parse(spatial).map_err(py_err)?,
        exposure_range,
        ..ModelConfig::default()
    };
    let spec = ModelSpec::from_panel(&panel.inner, graph.map(|g| &g.inner), &cfg).map_err(py_err)?;
    let inner = py.detach(|| dlnmlps::fit(&spec, None, &FitOptions::default())).map_err(py_err)?;
    Ok(PyFit { inner })
}

/// B-spline basis matrix (rows = points) with equidistant knots on `[lo, hi]`.
#[pyfunction]
#[pyo3(signature = (x, lo, hi, n_basis, degree = 3))]
fn bspline(x: Vec<f64>, lo: f64, hi: f64, n_basis: usize, degree: usize) -> PyResult<Vec<Vec<f64>>> {
    let knots = equidistant_knots(lo, hi, n_basis, degree).map_err(py_err)?;
    let m = bspline_eval(&x, &knots).map_err(py_err)?;
    Ok((0..m.n_points()).map(|i| m.values.row(i).iter().copied().collect()).collect())
}

fn result_dict<'py>(py: Python<'py>, r: &ReplicateResult) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(r).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Simulates, fits and scores replicates. `settings` takes the same keys as
/// the command-line configuration file. Returns one dict per replicate.
#[pyfunction]
#[pyo3(signature = (settings, replicates, seed, first_replicate = 0))]
fn simulate<'py>(
    py: Python<'py>,
    settings: BTreeMap<String, String>,
    replicates: usize,
    seed: u64,
    first_replicate: usize,
) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let mut cfg = RunConfig::default();
    for (k, v) in &settings {
        cfg.set(k, v).map_err(cli_err)?;
    }
    let setup = sim_setup(&cfg).map_err(cli_err)?;
    let results = py.detach(|| {
        (first_replicate..first_replicate + replicates)
            .map(|i| run_replicate(&setup, seed, i).map(|(r, _)| r))
            .collect::<dlnmlps::Result<Vec<_>>>()
    });
    results.map_err(py_err)?.iter().map(|r| result_dict(py, r)).collect()
}

/// Seed of replicate `index` under `master`.
#[pyfunction]
fn derive_seed(master: u64, index: usize) -> u64 {
    replicate_seed(master, index)
}

pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bspline, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[pymodule]
#[pyo3(name = "dlnmlps")]
fn dlnmlps_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
