//! Python bindings: a `Model` class wrapping the configured diffusion and
//! functional, solver and estimator methods on it, and catalog helpers.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use explode::feller::{feller_classify, QuadConfig};
use explode::mc;
use explode::model::{load_config, DiffusionModel, FeynmanKacSpec};
use explode::oracles;
use explode::pde::{self, PDEGrid, PDESolution};
use explode::sim::SimConfig;
use explode::verify::{ito_residual, TestFunctionJet};

fn py_err(e: explode::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pick_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

/// One Monte Carlo estimate at a time point.
#[pyclass(frozen, get_all)]
struct Estimate {
    t: f64,
    x: Vec<f64>,
    value: f64,
    std_error: f64,
    n_paths: usize,
    n_invalid: usize,
    seed: u64,
}

#[pymethods]
impl Estimate {
    fn __repr__(&self) -> String {
        format!(
            "Estimate(t={}, value={}, std_error={}, n_paths={})",
            self.t, self.value, self.std_error, self.n_paths
        )
    }
}

fn wrap_estimates(ests: Vec<mc::MCEstimate>) -> Vec<Estimate> {
    ests.into_iter()
        .map(|e| Estimate {
            t: e.t,
            x: e.x,
            value: e.value,
            std_error: e.std_error,
            n_paths: e.n_paths,
            n_invalid: e.n_invalid,
            seed: e.rng_seed,
        })
        .collect()
}

/// Finite-difference solution on a space-time grid.
#[pyclass(frozen)]
struct Solution {
    inner: PDESolution,
}

#[pymethods]
impl Solution {
    /// Saved time levels, increasing from zero.
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    /// Node coordinates along each axis.
    #[getter]
    fn axes(&self) -> Vec<Vec<f64>> {
        self.inner.axes.clone()
    }

    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    /// Values of the time slice closest to the requested level index.
    fn slice(&self, j: usize) -> PyResult<Vec<f64>> {
        if j >= self.inner.times.len() {
            return Err(PyValueError::new_err(format!(
                "slice index {j} out of range ({} levels)",
                self.inner.times.len()
            )));
        }
        Ok(self.inner.slice(j).to_vec())
    }

    /// Solution value at a stored time level and grid node.
    fn value_at(&self, t: f64, x: Vec<f64>) -> PyResult<f64> {
        self.inner.lookup(t, &x).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution({} times x {} nodes, theta={})",
            self.inner.times.len(),
            self.inner.n_nodes(),
            self.inner.theta
        )
    }
}

/// A diffusion with its terminal data and potential.
#[pyclass(frozen)]
struct Model {
    model: DiffusionModel,
    fk: FeynmanKacSpec,
}

#[pymethods]
impl Model {
    /// Load a model from configuration text in the TOML schema.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Model> {
        let (model, fk) = load_config(text, "<python>").map_err(py_err)?;
        Ok(Model { model, fk })
    }

    /// Load one of the bundled example models by name.
    #[staticmethod]
    fn from_catalog(name: &str) -> PyResult<Model> {
        let (model, fk) = oracles::catalog_model(name).map_err(py_err)?;
        Ok(Model { model, fk })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Monte Carlo survival probabilities U(t, x) on a time grid.
    #[pyo3(signature = (x, t_grid, n_paths=100_000, dt=1e-3, seed=None))]
    fn estimate_survival(
        &self,
        x: Vec<f64>,
        t_grid: Vec<f64>,
        n_paths: usize,
        dt: f64,
        seed: Option<u64>,
    ) -> PyResult<Vec<Estimate>> {
        let cfg = self.sim_config(dt, &t_grid, seed)?;
        let ests = mc::estimate_u(&self.model, &x, &t_grid, n_paths, &cfg).map_err(py_err)?;
        Ok(wrap_estimates(ests))
    }

    /// Monte Carlo estimates of the weighted functional on a time grid.
    #[pyo3(signature = (x, t_grid, n_paths=100_000, dt=1e-3, seed=None))]
    fn estimate_functional(
        &self,
        x: Vec<f64>,
        t_grid: Vec<f64>,
        n_paths: usize,
        dt: f64,
        seed: Option<u64>,
    ) -> PyResult<Vec<Estimate>> {
        let cfg = self.sim_config(dt, &t_grid, seed)?;
        let ests = mc::estimate_feynman_kac(&self.model, &self.fk, &x, &t_grid, n_paths, &cfg)
            .map_err(py_err)?;
        Ok(wrap_estimates(ests))
    }

    /// Finite-difference solve of the Cauchy problem.
    #[pyo3(signature = (dx, dt, t_max, theta=1.0, m=None, centered=false))]
    fn solve(
        &self,
        dx: f64,
        dt: f64,
        t_max: f64,
        theta: f64,
        m: Option<u32>,
        centered: bool,
    ) -> PyResult<Solution> {
        let grid = PDEGrid::new(dx, dt, t_max)
            .with_theta(theta)
            .with_upwind(!centered);
        let inner = pde::solve_cauchy(&self.model, &self.fk, m, &grid).map_err(py_err)?;
        Ok(Solution { inner })
    }

    /// Increasing-truncation sweep; returns the last solution and a report.
    #[pyo3(signature = (dx, dt, t_max, m_lo=1, m_hi=6, tol=1e-4))]
    #[allow(clippy::too_many_arguments)]
    fn minimal_solution(
        &self,
        py: Python<'_>,
        dx: f64,
        dt: f64,
        t_max: f64,
        m_lo: u32,
        m_hi: u32,
        tol: f64,
    ) -> PyResult<(Solution, Py<PyDict>)> {
        let grid = PDEGrid::new(dx, dt, t_max);
        let (inner, rep) =
            pde::minimal_solution(&self.model, &self.fk, &grid, (m_lo, m_hi), tol, m_lo == m_hi)
                .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("m_values", rep.m_values)?;
        d.set_item("sup_diffs", rep.sup_diffs)?;
        d.set_item("converged", rep.converged)?;
        d.set_item("tol", rep.tol)?;
        Ok((Solution { inner }, d.unbind()))
    }

    /// Endpoint accessibility test; classification plus endpoint integrals.
    #[pyo3(signature = (c=None))]
    fn feller(&self, py: Python<'_>, c: Option<f64>) -> PyResult<Py<PyDict>> {
        let rep = feller_classify(&self.model, c, &QuadConfig::default()).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("classification", format!("{:?}", rep.classification))?;
        d.set_item("c", rep.c)?;
        d.set_item("v_left", rep.v_left)?;
        d.set_item("v_right", rep.v_right)?;
        Ok(d.unbind())
    }

    /// Nested stopped-identity check; `passed` uses a three sigma band.
    #[pyo3(signature = (t_star, x, delta, n_outer=2000, n_inner=2000, dt=1e-3, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn martingale_check(
        &self,
        py: Python<'_>,
        t_star: f64,
        x: Vec<f64>,
        delta: f64,
        n_outer: usize,
        n_inner: usize,
        dt: f64,
        seed: Option<u64>,
    ) -> PyResult<Py<PyDict>> {
        let cfg = SimConfig::new(dt, t_star, pick_seed(seed));
        let chk = mc::check_martingale(&self.model, &self.fk, t_star, &x, delta, n_outer, n_inner, &cfg)
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("lhs", chk.lhs)?;
        d.set_item("rhs", chk.rhs)?;
        d.set_item("discrepancy", chk.discrepancy)?;
        d.set_item("combined_std_error", chk.combined_std_error)?;
        d.set_item("passed", chk.discrepancy.abs() <= 3.0 * chk.combined_std_error)?;
        Ok(d.unbind())
    }

    /// Mean pathwise decomposition residual of a declared test-function jet.
    #[pyo3(signature = (phi, phi_t, grad, hess, t_star, x, delta, n_paths=100_000, dt=1e-3, seed=None))]
    #[allow(clippy::too_many_arguments)]
    fn pathwise_residual(
        &self,
        py: Python<'_>,
        phi: &str,
        phi_t: &str,
        grad: Vec<String>,
        hess: Vec<String>,
        t_star: f64,
        x: Vec<f64>,
        delta: f64,
        n_paths: usize,
        dt: f64,
        seed: Option<u64>,
    ) -> PyResult<Py<PyDict>> {
        let grad: Vec<&str> = grad.iter().map(String::as_str).collect();
        let hess: Vec<&str> = hess.iter().map(String::as_str).collect();
        let jet = TestFunctionJet::parse(self.model.dim(), phi, phi_t, &grad, &hess).map_err(py_err)?;
        let cfg = SimConfig::new(dt, t_star, pick_seed(seed));
        let stats = ito_residual(&self.model, &self.fk, &jet, t_star, &x, delta, n_paths, &cfg)
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mean", stats.mean)?;
        d.set_item("sd", stats.sd)?;
        d.set_item("std_error", stats.std_error)?;
        d.set_item("martingale_mean", stats.martingale_mean)?;
        d.set_item("n_paths", stats.n_paths)?;
        d.set_item("n_invalid", stats.n_invalid)?;
        Ok(d.unbind())
    }

    fn __repr__(&self) -> String {
        format!("Model(dim={})", self.model.dim())
    }
}

impl Model {
    fn sim_config(&self, dt: f64, t_grid: &[f64], seed: Option<u64>) -> PyResult<SimConfig> {
        let t_max = t_grid
            .iter()
            .fold(0.0_f64, |a, &b| a.max(b))
            .max(dt);
        if !t_max.is_finite() {
            return Err(PyValueError::new_err("time grid must be finite"));
        }
        Ok(SimConfig::new(dt, t_max, pick_seed(seed)))
    }
}

/// Names of the bundled example models.
#[pyfunction]
fn catalog_names() -> Vec<String> {
    oracles::catalog().iter().map(|e| e.name.to_string()).collect()
}

/// Configuration text of a bundled example model.
#[pyfunction]
fn catalog_config(name: &str) -> PyResult<String> {
    Ok(oracles::catalog_entry(name).map_err(py_err)?.config.to_string())
}

#[pymodule]
fn explode_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Estimate>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(catalog_names, m)?)?;
    m.add_function(wrap_pyfunction!(catalog_config, m)?)?;
    Ok(())
}
