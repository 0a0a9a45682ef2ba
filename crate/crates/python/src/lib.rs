use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use qeuler::driver::IntegrateMode;
use qeuler::experiment::{self, Command};
use qeuler::observables::Observable;
use qeuler::{systems, AmplitudeState, Error, StepMode, C64};

fn to_py(err: Error) -> PyErr {
    match experiment::exit_code_for(&err) {
        experiment::EXIT_FAILURE => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Converts a serializable value into plain Python objects via JSON.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "PolynomialMap", skip_from_py_object)]
#[derive(Clone)]
pub struct PyPolynomialMap(pub qeuler::PolynomialMap);

#[pymethods]
impl PyPolynomialMap {
    #[new]
    fn new(n: usize, degree: usize) -> PyResult<Self> {
        qeuler::PolynomialMap::new(n, degree).map(Self).map_err(to_py)
    }

    /// Adds `coeff * z_{vars[0]} * ... ` to component `alpha` (variables are 1-based).
    fn add_term(&mut self, alpha: usize, vars: Vec<usize>, coeff: C64) -> PyResult<()> {
        self.0.add_term(alpha, &vars, coeff).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.0.degree()
    }

    fn apply(&self, z: Vec<C64>) -> PyResult<Vec<C64>> {
        self.0.apply(&z).map_err(to_py)
    }

    #[pyo3(signature = (samples = 256, seed = 0))]
    fn validate(&self, py: Python<'_>, samples: usize, seed: u64) -> PyResult<Py<PyAny>> {
        to_object(py, &self.0.validate(samples, seed).map_err(to_py)?)
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_json(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        qeuler::PolynomialMap::read_json(text.as_bytes()).map(Self).map_err(to_py)
    }
}

#[pyclass(name = "OdeSystem", skip_from_py_object)]
#[derive(Clone)]
pub struct PyOdeSystem(pub qeuler::OdeSystem);

#[pymethods]
impl PyOdeSystem {
    #[new]
    fn new(n: usize, degree: usize) -> PyResult<Self> {
        qeuler::OdeSystem::new(n, degree).map(Self).map_err(to_py)
    }

    fn add_term(&mut self, alpha: usize, vars: Vec<usize>, coeff: C64) -> PyResult<()> {
        self.0.add_term(alpha, &vars, coeff).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn rhs(&self, z: Vec<C64>) -> PyResult<Vec<C64>> {
        self.0.rhs(&z).map_err(to_py)
    }

    /// `z -> z + h f(z)`.
    fn euler_map(&self, h: f64) -> PyResult<PyPolynomialMap> {
        qeuler::euler_map(&self.0, h).map(PyPolynomialMap).map_err(to_py)
    }

    #[pyo3(signature = (samples = 256, tol = 1e-9, seed = 0))]
    fn check_measure_preserving(&self, samples: usize, tol: f64, seed: u64) -> PyResult<(bool, f64)> {
        let c = self.0.check_measure_preserving(samples, tol, seed).map_err(to_py)?;
        Ok((c.preserving, c.residual))
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_json(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        qeuler::OdeSystem::read_json(text.as_bytes()).map(Self).map_err(to_py)
    }
}

#[pyclass(name = "StepOperator")]
pub struct PyStepOperator(pub qeuler::StepOperator);

#[pymethods]
impl PyStepOperator {
    #[new]
    #[pyo3(signature = (map, epsilon = None))]
    fn new(map: &PyPolynomialMap, epsilon: Option<f64>) -> PyResult<Self> {
        qeuler::StepOperator::new(&map.0, epsilon).map(Self).map_err(to_py)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.0.epsilon()
    }

    #[getter]
    fn h_norm(&self) -> f64 {
        self.0.h_norm()
    }

    #[getter]
    fn h_norm_bound(&self) -> f64 {
        self.0.h_norm_bound()
    }

    /// One exact step on the success branch: `(decoded F(z), probability, norm_factor)`.
    fn step(&self, z: Vec<C64>) -> PyResult<(Vec<C64>, f64, Option<f64>)> {
        let state = AmplitudeState::encode(&z, qeuler::driver::ENCODE_TOL).map_err(to_py)?;
        let mut rng = qeuler::rng::stream(0, 0);
        let out = self.0.step(&state, StepMode::Exact, &mut rng).map_err(to_py)?;
        let decoded = out
            .posterior
            .expect("exact mode follows the success branch")
            .decode()
            .map_err(to_py)?;
        Ok((decoded, out.probability, out.norm_factor))
    }
}

#[pyfunction]
#[pyo3(signature = (map, z0, m, epsilon = None))]
fn run_deterministic(py: Python<'_>, map: &PyPolynomialMap, z0: Vec<C64>, m: usize, epsilon: Option<f64>) -> PyResult<Py<PyAny>> {
    to_object(py, &qeuler::run_deterministic(&map.0, &z0, m, epsilon).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (system, z0, t, m, epsilon = None))]
fn integrate(py: Python<'_>, system: &PyOdeSystem, z0: Vec<C64>, t: f64, m: usize, epsilon: Option<f64>) -> PyResult<Py<PyAny>> {
    let mut rng = qeuler::rng::stream(0, 0);
    let report = qeuler::integrate(&system.0, &z0, t, m, epsilon, IntegrateMode::Deterministic, &mut rng)
        .map_err(to_py)?;
    to_object(py, &report)
}

#[pyfunction]
#[pyo3(signature = (m, epsilon, base = 16.0, lam = None))]
fn plan_resources(py: Python<'_>, m: usize, epsilon: f64, base: f64, lam: Option<f64>) -> PyResult<Py<PyAny>> {
    to_object(py, &qeuler::plan_resources(m, epsilon, base, lam).map_err(to_py)?)
}

#[pyfunction]
#[pyo3(signature = (map, z0, m, seed = 0, base = 16.0, epsilon = None))]
fn run_montecarlo(
    py: Python<'_>,
    map: &PyPolynomialMap,
    z0: Vec<C64>,
    m: usize,
    seed: u64,
    base: f64,
    epsilon: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let op = qeuler::StepOperator::new(&map.0, epsilon).map_err(to_py)?;
    let plan = qeuler::plan_resources(m, op.epsilon(), base, None).map_err(to_py)?;
    let report = qeuler::run_montecarlo(&map.0, &z0, &plan, &mut qeuler::rng::stream(seed, 0)).map_err(to_py)?;
    to_object(py, &report)
}

#[pyfunction]
fn error_bound(eta: f64, gamma: f64, m: usize) -> PyResult<f64> {
    qeuler::error_bound(eta, gamma, m).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (map, z0, m, eta, trials = 100, seed = 0, epsilon = None))]
fn noise_study(
    py: Python<'_>,
    map: &PyPolynomialMap,
    z0: Vec<C64>,
    m: usize,
    eta: f64,
    trials: usize,
    seed: u64,
    epsilon: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let noise = qeuler::NoiseModel { eta, stream: 0 };
    to_object(py, &qeuler::noise_study(&map.0, &z0, m, epsilon, &noise, trials, seed).map_err(to_py)?)
}

#[pyfunction]
fn fourier_spectrum(z: Vec<C64>) -> Vec<C64> {
    qeuler::fourier_spectrum(&z)
}

/// `(<phi|M|phi>, amplitude-convention value)` for the encoded unit vector `z`.
#[pyfunction]
fn expectation(z: Vec<C64>, matrix: Vec<Vec<C64>>) -> PyResult<(f64, f64)> {
    let obs = Observable::from_rows("python", &matrix).map_err(to_py)?;
    let state = AmplitudeState::encode(&z, qeuler::driver::ENCODE_TOL).map_err(to_py)?;
    let e = qeuler::expectation(&state, &obs).map_err(to_py)?;
    Ok((e.state, e.amplitude))
}

#[pyfunction]
fn orszag_mclaughlin(n: usize) -> PyResult<PyOdeSystem> {
    systems::orszag_mclaughlin(n).map(PyOdeSystem).map_err(to_py)
}

#[pyfunction]
fn lorenz() -> PyOdeSystem {
    PyOdeSystem(systems::lorenz())
}

#[pyfunction]
fn doubling_map() -> PyPolynomialMap {
    PyPolynomialMap(systems::doubling_map())
}

#[pyfunction]
fn tripling_map() -> PyPolynomialMap {
    PyPolynomialMap(systems::tripling_map())
}

#[pyfunction]
#[pyo3(signature = (n, degree = 2, seed = 0))]
fn random_torus_map(n: usize, degree: usize, seed: u64) -> PyResult<PyPolynomialMap> {
    systems::random_torus_map(n, degree, &mut qeuler::rng::stream(seed, 0))
        .map(PyPolynomialMap)
        .map_err(to_py)
}

/// Runs a CLI subcommand on a JSON config and returns its exit code.
#[pyfunction]
fn run_experiment(command: &str, config_json: &str, out: &str) -> PyResult<i32> {
    let command = match command.replace('_', "-").as_str() {
        "validate" => Command::Validate,
        "plan" => Command::Plan,
        "iterate" => Command::Iterate,
        "integrate" => Command::Integrate,
        "noise-study" => Command::NoiseStudy,
        "observe" => Command::Observe,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let config = experiment::parse_config(config_json).map_err(to_py)?;
    Ok(experiment::execute(command, &config, Path::new(out)).exit_code)
}

#[pymodule]
#[pyo3(name = "qeuler")]
fn qeuler_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolynomialMap>()?;
    m.add_class::<PyOdeSystem>()?;
    m.add_class::<PyStepOperator>()?;
    m.add_function(wrap_pyfunction!(run_deterministic, m)?)?;
    m.add_function(wrap_pyfunction!(run_montecarlo, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_resources, m)?)?;
    m.add_function(wrap_pyfunction!(error_bound, m)?)?;
    m.add_function(wrap_pyfunction!(noise_study, m)?)?;
    m.add_function(wrap_pyfunction!(fourier_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(expectation, m)?)?;
    m.add_function(wrap_pyfunction!(orszag_mclaughlin, m)?)?;
    m.add_function(wrap_pyfunction!(lorenz, m)?)?;
    m.add_function(wrap_pyfunction!(doubling_map, m)?)?;
    m.add_function(wrap_pyfunction!(tripling_map, m)?)?;
    m.add_function(wrap_pyfunction!(random_torus_map, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
