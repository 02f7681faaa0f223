//! Python bindings. Matrices cross the boundary as lists of rows; reports
//! come back as plain dicts.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use sysid::bounds;
use sysid::dynamics::{self, InitialState, SystemSpec};
use sysid::harness::{self, BoundSettings, ExperimentConfig, SystemConfig};
use sysid::linalg::{self, Mat};
use sysid::noise::NoiseModel;
use sysid::{estimator, spectral, SysIdError};

type Rows = Vec<Vec<f64>>;

fn err(e: SysIdError) -> PyErr {
    match e {
        SysIdError::Config(_) | SysIdError::InvalidInput(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn mat(rows: &Rows) -> PyResult<Mat> {
    linalg::from_rows(rows).map_err(err)
}

/// Serializes through JSON into Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A VAR(1) system `x(t+1) = A₀x(t) + w(t+1)`.
#[pyclass(name = "System")]
struct PySystem {
    spec: SystemSpec,
}

#[pymethods]
impl PySystem {
    /// Gaussian noise with covariance `noise_sqrt·noise_sqrt′` (identity by
    /// default) and the given or zero initial state.
    #[new]
    #[pyo3(signature = (a0, noise_sqrt=None, x0=None))]
    fn new(a0: Rows, noise_sqrt: Option<Rows>, x0: Option<Vec<f64>>) -> PyResult<Self> {
        let a = mat(&a0)?;
        let p = a.nrows();
        let noise = match noise_sqrt {
            Some(s) => NoiseModel::gaussian(mat(&s)?).map_err(err)?,
            None => NoiseModel::standard_gaussian(p),
        };
        let x0 = x0.map_or(InitialState::zero(p), InitialState::Fixed);
        Ok(Self {
            spec: SystemSpec::new(a, noise, x0).map_err(err)?,
        })
    }

    /// Builds a system from the `system` object of a campaign config.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let sys: SystemConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self {
            spec: sys.build().map_err(err)?,
        })
    }

    #[getter]
    fn a0(&self) -> Rows {
        linalg::to_rows(&self.spec.a0)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn regime(&self) -> PyResult<String> {
        let r = bounds::classify(&self.spec.a0, spectral::DEFAULT_UNIT_GAP).map_err(err)?;
        Ok(serde_json::to_value(r).unwrap().as_str().unwrap().to_string())
    }

    /// States `x(0..=n)` as rows.
    fn simulate(&self, n: usize, seed: u64) -> PyResult<Rows> {
        let traj = dynamics::simulate(&self.spec, n, seed).map_err(err)?;
        Ok(traj.states.iter().map(|x| x.iter().copied().collect()).collect())
    }

    /// Least-squares estimate from a fresh trajectory of length `n`.
    #[pyo3(signature = (n, seed, ridge=0.0))]
    fn estimate<'py>(&self, py: Python<'py>, n: usize, seed: u64, ridge: f64) -> PyResult<Bound<'py, PyAny>> {
        let traj = dynamics::simulate(&self.spec, n, seed).map_err(err)?;
        let est = estimator::ols(&traj, n, ridge).map_err(err)?.with_truth(&self.spec.a0);
        to_py(py, &est.record())
    }

    /// Sample-size prescription with all constants.
    #[pyo3(signature = (epsilon, delta, seed=0))]
    fn bounds<'py>(&self, py: Python<'py>, epsilon: f64, delta: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let opts = BoundSettings::default().opts(seed);
        to_py(py, &bounds::bound_report(&self.spec, epsilon, delta, &opts).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("System(a0={:?})", linalg::to_rows(&self.spec.a0))
    }
}

/// Least-squares estimate from given states (rows `x(0..=n)`).
#[pyfunction]
#[pyo3(signature = (states, ridge=0.0))]
fn estimate<'py>(py: Python<'py>, states: Rows, ridge: f64) -> PyResult<Bound<'py, PyAny>> {
    if states.len() < 2 {
        return Err(PyValueError::new_err("need at least two states"));
    }
    let traj = dynamics::Trajectory {
        states: states.into_iter().map(nalgebra::DVector::from_vec).collect(),
        noises: vec![],
        seed: 0,
        overflowed_at: None,
    };
    let n = traj.states.len() - 1;
    to_py(py, &estimator::ols(&traj, n, ridge).map_err(err)?.record())
}

#[pyfunction]
#[pyo3(signature = (a, unit_gap=spectral::DEFAULT_UNIT_GAP))]
fn regularity_check(a: Rows, unit_gap: f64) -> PyResult<bool> {
    spectral::regularity_check(&mat(&a)?, unit_gap).map_err(err)
}

/// `(M, A1, A2)` with `M A M⁻¹ = diag(A1, A2)`.
#[pyfunction]
#[pyo3(signature = (a, unit_gap=spectral::DEFAULT_UNIT_GAP))]
fn stable_explosive_split(a: Rows, unit_gap: f64) -> PyResult<(Rows, Rows, Rows)> {
    let s = spectral::stable_explosive_split(&mat(&a)?, unit_gap).map_err(err)?;
    Ok((linalg::to_rows(&s.m), linalg::to_rows(&s.a1), linalg::to_rows(&s.a2)))
}

#[pyfunction]
fn companion_embed(coeffs: Vec<Rows>) -> PyResult<Rows> {
    let mats = coeffs.iter().map(mat).collect::<PyResult<Vec<_>>>()?;
    Ok(linalg::to_rows(&spectral::companion_embed(&mats).map_err(err)?))
}

#[pyfunction]
fn lyap_solve(a: Rows, c: Rows) -> PyResult<Rows> {
    Ok(linalg::to_rows(&bounds::lyap_solve(&mat(&a)?, &mat(&c)?).map_err(err)?))
}

#[pyfunction]
fn bernstein_bound(p: usize, variance_proxy: f64, max_eig_bound: f64, y: f64) -> f64 {
    bounds::bernstein_bound(p, variance_proxy, max_eig_bound, y)
}

#[pyfunction]
fn azuma_bound(p: usize, sigma_sq: f64, y: f64) -> f64 {
    bounds::azuma_bound(p, sigma_sq, y)
}

/// Runs a campaign from a JSON config, writes its files, returns the summary.
#[pyfunction]
fn run_montecarlo<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    let (report, files) = py.detach(|| harness::run_montecarlo(&cfg)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("summary", to_py(py, &report.summary())?)?;
    out.set_item("campaign_csv", files.campaign_csv.to_string_lossy().into_owned())?;
    out.set_item("summary_json", files.summary_json.to_string_lossy().into_owned())?;
    Ok(out.into_any())
}

/// Runs the command line front end with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn cli(argv: Vec<String>) -> i32 {
    let args = std::iter::once("unstable-sysid".to_string()).chain(argv);
    harness::cli_dispatch(args)
}

#[pymodule]
#[pyo3(name = "unstable_sysid")]
fn unstable_sysid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(regularity_check, m)?)?;
    m.add_function(wrap_pyfunction!(stable_explosive_split, m)?)?;
    m.add_function(wrap_pyfunction!(companion_embed, m)?)?;
    m.add_function(wrap_pyfunction!(lyap_solve, m)?)?;
    m.add_function(wrap_pyfunction!(bernstein_bound, m)?)?;
    m.add_function(wrap_pyfunction!(azuma_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_montecarlo, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
