//! Python bindings for `multiverse_core`.
//!
//! Matrices cross the boundary as lists of rows. Library errors map onto
//! `ValueError` (bad input), `ArithmeticError` (numerical failure) and
//! `OSError` (files).

use std::path::PathBuf;

use multiverse_core::pooling::{self, PoolMethod, DEFAULT_EPSILON};
use multiverse_core::report::{self, AnalysisConfig, Mode};
use multiverse_core::simulation::{self, ScenarioId, SimConfig, WeightBasis};
use multiverse_core::{estimands, inference, mvn, Error, McSettings};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(m) => PyOSError::new_err(m),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn default_names(j: usize) -> Vec<String> {
    (1..=j).map(|k| format!("p{k}")).collect()
}

fn dataset(values: Vec<Vec<f64>>, pipelines: Option<Vec<String>>, exposure: Option<Vec<bool>>) -> PyResult<estimands::Dataset> {
    let m = matrix(&values)?;
    let pipelines = pipelines.unwrap_or_else(|| default_names(m.ncols()));
    let subjects = (1..=m.nrows()).map(|k| format!("s{k}")).collect();
    estimands::Dataset::from_matrix(subjects, pipelines, m, exposure).map_err(to_py)
}

/// Joint distribution of the per-pipeline estimates.
#[pyclass(name = "JointEstimates", frozen, skip_from_py_object)]
struct PyJoint {
    inner: estimands::JointEstimates,
}

#[pymethods]
impl PyJoint {
    #[new]
    #[pyo3(signature = (psi_hat, sigma, n, pipelines=None))]
    fn new(psi_hat: Vec<f64>, sigma: Vec<Vec<f64>>, n: usize, pipelines: Option<Vec<String>>) -> PyResult<Self> {
        let names = pipelines.unwrap_or_else(|| default_names(psi_hat.len()));
        estimands::JointEstimates::from_covariance(names, DVector::from_vec(psi_hat), matrix(&sigma)?, n)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn pipelines(&self) -> Vec<String> {
        self.inner.pipelines.clone()
    }

    #[getter]
    fn psi_hat(&self) -> Vec<f64> {
        self.inner.psi_hat.iter().cloned().collect()
    }

    #[getter]
    fn se(&self) -> Vec<f64> {
        self.inner.se.iter().cloned().collect()
    }

    #[getter]
    fn t_stats(&self) -> Vec<f64> {
        self.inner.t_stats.iter().cloned().collect()
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.sigma)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    fn correlation(&self) -> PyResult<Vec<Vec<f64>>> {
        estimands::correlation_of(&self.inner).map(|m| rows(&m)).map_err(to_py)
    }

    fn unadjusted_p(&self) -> PyResult<Vec<f64>> {
        self.inner.unadjusted_p().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("JointEstimates(J={}, n={})", self.inner.n_pipelines(), self.inner.n)
    }
}

/// A pooled estimate of the common effect.
#[pyclass(name = "PooledResult", frozen, get_all, skip_from_py_object)]
struct PyPooled {
    method: String,
    estimate: f64,
    weights: Vec<f64>,
    se: f64,
    statistic: f64,
    p_value: f64,
    ci: (f64, f64),
    kappa: Option<f64>,
    eigen_dropped: usize,
}

#[pymethods]
impl PyPooled {
    fn __repr__(&self) -> String {
        format!("PooledResult(method={:?}, estimate={}, se={})", self.method, self.estimate, self.se)
    }
}

impl From<pooling::PooledResult> for PyPooled {
    fn from(p: pooling::PooledResult) -> Self {
        Self {
            method: p.method.name().to_owned(),
            estimate: p.estimate,
            weights: p.weights,
            se: p.se,
            statistic: p.statistic,
            p_value: p.p_value,
            ci: p.ci,
            kappa: p.kappa,
            eigen_dropped: p.eigen_dropped,
        }
    }
}

/// One-sample estimates: mean of each column minus `reference`. Rows are subjects.
#[pyfunction]
#[pyo3(signature = (values, reference, pipelines=None))]
fn estimate_one_sample(values: Vec<Vec<f64>>, reference: f64, pipelines: Option<Vec<String>>) -> PyResult<PyJoint> {
    let data = dataset(values, pipelines, None)?;
    let (inner, _) = estimands::estimate_one_sample(&data, reference).map_err(to_py)?;
    Ok(PyJoint { inner })
}

/// Two-sample estimates: difference of group means of each column.
#[pyfunction]
#[pyo3(signature = (values, exposure, pipelines=None))]
fn estimate_two_sample(values: Vec<Vec<f64>>, exposure: Vec<bool>, pipelines: Option<Vec<String>>) -> PyResult<PyJoint> {
    let data = dataset(values, pipelines, Some(exposure))?;
    let (inner, _) = estimands::estimate_two_sample(&data).map_err(to_py)?;
    Ok(PyJoint { inner })
}

/// Joint estimates from an n x J influence matrix (rows are subjects).
#[pyfunction]
#[pyo3(signature = (phi, psi_hat, pipelines=None))]
fn influence_to_joint(phi: Vec<Vec<f64>>, psi_hat: Vec<f64>, pipelines: Option<Vec<String>>) -> PyResult<PyJoint> {
    let m = matrix(&phi)?;
    let names = pipelines.unwrap_or_else(|| default_names(m.ncols()));
    let subjects = (1..=m.nrows()).map(|k| format!("s{k}")).collect();
    let infl = estimands::InfluenceMatrix::new(m, names, subjects).map_err(to_py)?;
    estimands::influence_to_joint(&infl, &DVector::from_vec(psi_hat))
        .map(|inner| PyJoint { inner })
        .map_err(to_py)
}

fn settings(seed: u64, target: Option<f64>) -> McSettings {
    let mut s = McSettings::with_seed(seed);
    if let Some(t) = target {
        s.target_abs_error = t;
    }
    s
}

/// Returns `(probability, error_estimate)` for a box under a standard MVN.
#[pyfunction]
#[pyo3(signature = (corr, lower, upper, seed=0, target_abs_error=None))]
fn rect_prob(corr: Vec<Vec<f64>>, lower: Vec<f64>, upper: Vec<f64>, seed: u64, target_abs_error: Option<f64>) -> PyResult<(f64, f64)> {
    let r = mvn::rect_prob(&matrix(&corr)?, &lower, &upper, &settings(seed, target_abs_error)).map_err(to_py)?;
    Ok((r.p, r.error_estimate))
}

#[pyfunction]
#[pyo3(signature = (corr, alpha=0.05, seed=0))]
fn critical_value(corr: Vec<Vec<f64>>, alpha: f64, seed: u64) -> PyResult<f64> {
    mvn::critical_value(&matrix(&corr)?, alpha, &settings(seed, None)).map_err(to_py)
}

/// Returns `(global_p, adjusted_p)`.
#[pyfunction]
#[pyo3(signature = (joint, seed=0))]
fn maxtest(joint: PyRef<'_, PyJoint>, seed: u64) -> PyResult<(f64, Vec<f64>)> {
    let r = mvn::maxtest_pvalue(&joint.inner, &settings(seed, None)).map_err(to_py)?;
    Ok((r.global_p, r.adjusted_p))
}

/// Pools with one method: average, pool-se, gls or constrained-gls.
#[pyfunction]
#[pyo3(signature = (joint, method, epsilon=DEFAULT_EPSILON))]
fn pool(joint: PyRef<'_, PyJoint>, method: &str, epsilon: f64) -> PyResult<PyPooled> {
    let j = &joint.inner;
    let r = match PoolMethod::from_name(method) {
        Some(PoolMethod::Average) => Ok(pooling::pool_average(j)),
        Some(PoolMethod::PoolSe) => pooling::pool_se(j),
        Some(PoolMethod::Gls) => pooling::pool_gls(j, epsilon),
        Some(PoolMethod::ConstrainedGls) => pooling::pool_constrained_gls(j, epsilon),
        None => return Err(PyValueError::new_err(format!("unknown pooling method `{method}`"))),
    };
    r.map(PyPooled::from).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (joint, epsilon=DEFAULT_EPSILON))]
fn pool_all(joint: PyRef<'_, PyJoint>, epsilon: f64) -> PyResult<Vec<PyPooled>> {
    pooling::pool_all(&joint.inner, epsilon)
        .map(|v| v.into_iter().map(PyPooled::from).collect())
        .map_err(to_py)
}

/// Weights after applying the |w| <= 1 constraint; returns `(weights, kappa)`.
#[pyfunction]
fn constrain_weights(weights: Vec<f64>) -> (Vec<f64>, f64) {
    let (w, k) = pooling::constrain_weights(&DVector::from_vec(weights));
    (w.iter().cloned().collect(), k)
}

/// Both proportion estimators and the delta-method standard error.
#[pyfunction]
fn proportion<'py>(py: Python<'py>, joint: PyRef<'_, PyJoint>, t_c: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = inference::proportion(&joint.inner, t_c).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("eta_nonparametric", r.eta_nonparametric)?;
    d.set_item("eta_parametric", r.eta_parametric)?;
    d.set_item("se_delta", r.se_delta)?;
    d.set_item("t_c", r.t_c)?;
    Ok(d)
}

/// Large-sample weights of a scenario as `{method: [weights]}`.
#[pyfunction]
#[pyo3(signature = (scenario, basis="noise"))]
fn scenario_weights<'py>(py: Python<'py>, scenario: &str, basis: &str) -> PyResult<Bound<'py, PyDict>> {
    let id: ScenarioId = scenario.parse().map_err(to_py)?;
    let basis: WeightBasis = basis.parse().map_err(to_py)?;
    let table = simulation::large_sample_weights(&simulation::build_scenario(id), basis).map_err(to_py)?;
    let d = PyDict::new(py);
    for (m, w) in table.rows {
        d.set_item(m.name(), w)?;
    }
    Ok(d)
}

/// Noise covariance of a reference scenario.
#[pyfunction]
fn scenario_noise(scenario: &str) -> PyResult<Vec<Vec<f64>>> {
    let id: ScenarioId = scenario.parse().map_err(to_py)?;
    Ok(rows(&simulation::build_scenario(id).noise_cov))
}

/// Runs the simulation study and returns its CSV summary.
#[pyfunction]
#[pyo3(signature = (scenarios, n, beta, replicates=1000, seed=1, eta=true))]
fn simulate(py: Python<'_>, scenarios: Vec<String>, n: Vec<usize>, beta: Vec<f64>, replicates: usize, seed: u64, eta: bool) -> PyResult<String> {
    let ids = scenarios
        .iter()
        .map(|s| s.parse::<ScenarioId>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let defaults = SimConfig::default();
    let config = SimConfig {
        scenarios: ids,
        n_grid: n,
        betas: beta,
        replicates,
        seed,
        eta: if eta { defaults.eta } else { None },
        ..defaults
    };
    py.detach(|| simulation::run_study(&config))
        .map(|r| r.to_csv())
        .map_err(to_py)
}

/// Full analysis of a long-format CSV file; writes the report files into `out_dir`.
#[pyfunction]
#[pyo3(signature = (input, mode, out_dir, reference=None, alpha=0.05, seed=0, bootstrap=None))]
#[allow(clippy::too_many_arguments)]
fn analyze_file(
    py: Python<'_>,
    input: PathBuf,
    mode: &str,
    out_dir: PathBuf,
    reference: Option<f64>,
    alpha: f64,
    seed: u64,
    bootstrap: Option<usize>,
) -> PyResult<f64> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let cfg = AnalysisConfig {
        mode,
        reference,
        alpha,
        seed,
        bootstrap,
        ..AnalysisConfig::default()
    };
    py.detach(|| {
        let data = report::read_long_csv(&input, mode, reference)?;
        let rep = report::analyze(&data, &cfg)?;
        rep.write(&out_dir)?;
        Ok(rep.t_c)
    })
    .map_err(to_py)
}

#[pymodule]
pub fn multiverse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyJoint>()?;
    m.add_class::<PyPooled>()?;
    m.add_function(wrap_pyfunction!(estimate_one_sample, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(influence_to_joint, m)?)?;
    m.add_function(wrap_pyfunction!(rect_prob, m)?)?;
    m.add_function(wrap_pyfunction!(critical_value, m)?)?;
    m.add_function(wrap_pyfunction!(maxtest, m)?)?;
    m.add_function(wrap_pyfunction!(pool, m)?)?;
    m.add_function(wrap_pyfunction!(pool_all, m)?)?;
    m.add_function(wrap_pyfunction!(constrain_weights, m)?)?;
    m.add_function(wrap_pyfunction!(proportion, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_weights, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_noise, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_file, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
