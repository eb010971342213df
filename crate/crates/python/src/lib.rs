//! Python module `gas_storage`.
//!
//! Configurations are passed as TOML text in the same schema as the
//! command-line tool; structured results come back as plain dicts and lists.

use std::path::PathBuf;

use gas_storage::analysis;
use gas_storage::config::ExperimentConfig;
use gas_storage::harness::{self, test_seeds, ConstantPolicy, PolicyCheckpoint, UniformPolicy};
use gas_storage::seasonality::fit_coefficients;
use gas_storage::{EnvConfig, Error, ErrorCategory, MarketEnv, StepOutcome};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(gas_storage, ConfigError, PyValueError, "Invalid configuration value.");
create_exception!(
    gas_storage,
    DataError,
    PyValueError,
    "Malformed or unusable input data."
);
create_exception!(
    gas_storage,
    SimulationError,
    PyRuntimeError,
    "Failure while simulating or training."
);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Config => ConfigError::new_err(msg),
        ErrorCategory::Data => DataError::new_err(msg),
        ErrorCategory::Runtime => SimulationError::new_err(msg),
    }
}

/// Convert any serializable value to Python objects through `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_config(config: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml_str(config, &[]).map_err(py_err)
}

fn env_config(config: &str) -> PyResult<EnvConfig> {
    parse_config(config)?.env_config().map_err(py_err)
}

#[derive(Serialize)]
struct StepView<'a> {
    observation: [f64; 9],
    reward: f64,
    #[serde(flatten)]
    outcome: StepFields<'a>,
}

#[derive(Serialize)]
struct StepFields<'a> {
    t: usize,
    month: u32,
    price: f64,
    log_price: f64,
    demand: f64,
    supply: f64,
    excess_demand: f64,
    inventory: f64,
    bank: f64,
    failure: bool,
    failure_severity: f64,
    threshold_miss: bool,
    threshold_gap: f64,
    parts: &'a gas_storage::RewardParts,
    done: bool,
}

fn step_view(o: &StepOutcome) -> StepView<'_> {
    StepView {
        observation: o.observation.to_array(),
        reward: o.reward,
        outcome: StepFields {
            t: o.t,
            month: o.month,
            price: o.price,
            log_price: o.log_price,
            demand: o.demand,
            supply: o.supply,
            excess_demand: o.excess_demand,
            inventory: o.inventory,
            bank: o.bank,
            failure: o.failure,
            failure_severity: o.failure_severity,
            threshold_miss: o.threshold_miss,
            threshold_gap: o.threshold_gap,
            parts: &o.parts,
            done: o.done,
        },
    }
}

/// Single-market environment. `config` is TOML text; empty means defaults.
#[pyclass(name = "Env", module = "gas_storage")]
struct PyEnv {
    config: EnvConfig,
    inner: MarketEnv,
}

#[pymethods]
impl PyEnv {
    #[new]
    #[pyo3(signature = (config = "", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let config = env_config(config)?;
        let (inner, _) = MarketEnv::reset(config.clone(), seed).map_err(py_err)?;
        Ok(Self { config, inner })
    }

    /// Start a new episode and return the first observation.
    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        let (inner, obs) = MarketEnv::reset(self.config.clone(), seed).map_err(py_err)?;
        self.inner = inner;
        Ok(obs.to_array().to_vec())
    }

    /// Post a log price for the current month.
    fn step<'py>(&mut self, py: Python<'py>, log_price: f64) -> PyResult<Bound<'py, PyAny>> {
        let out = self.inner.step(log_price).map_err(py_err)?;
        to_py(py, &step_view(&out))
    }

    fn observation(&self) -> Vec<f64> {
        self.inner.observation().to_array().to_vec()
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.is_done()
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.state().t
    }

    #[getter]
    fn inventory(&self) -> f64 {
        self.inner.state().inventory
    }

    #[getter]
    fn bank(&self) -> f64 {
        self.inner.state().bank
    }

    #[getter]
    fn action_bounds(&self) -> (f64, f64) {
        self.inner.action_bounds()
    }
}

/// A trained policy loaded from a checkpoint file.
#[pyclass(name = "Checkpoint", module = "gas_storage")]
struct PyCheckpoint {
    inner: PolicyCheckpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PolicyCheckpoint::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn tag(&self) -> String {
        self.inner.tag.clone()
    }

    /// Deterministic log price for a nine-component observation.
    fn act(&self, observation: Vec<f64>) -> PyResult<f64> {
        gas_storage::sac::deterministic_action(&self.inner.actor, &observation, self.inner.scale).map_err(py_err)
    }

    #[pyo3(signature = (episodes = 50, seed = 0, sigma_s = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        episodes: usize,
        seed: u64,
        sigma_s: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let env = match sigma_s {
            Some(s) => self.inner.env_with_sigma_s(s),
            None => self.inner.env.clone(),
        };
        let ck = &self.inner;
        let eval = py
            .detach(|| harness::evaluate(ck, &env, &test_seeds(seed, episodes)))
            .map_err(py_err)?;
        to_py(py, &eval.report)
    }
}

/// Train a policy. Returns the training log, the best checkpoint's step and
/// its evaluation metrics. Artifacts are written when `run_dir` is given.
#[pyfunction]
#[pyo3(signature = (config = "", run_dir = None))]
fn train<'py>(py: Python<'py>, config: &str, run_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let spec = parse_config(config)?.run_spec().map_err(py_err)?;
    let out = py.detach(|| harness::train(spec, run_dir.as_deref())).map_err(py_err)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        best_step: u64,
        log: &'a [harness::LogRow],
        metrics: &'a harness::MetricsReport,
    }
    to_py(
        py,
        &Summary {
            best_step: out.best_checkpoint().step,
            log: &out.log,
            metrics: &out.best_evaluation.report,
        },
    )
}

/// Metrics of a reference policy: a constant `price`, or uniform random log
/// prices when `price` is None.
#[pyfunction]
#[pyo3(signature = (price = None, episodes = 50, seed = 0, config = ""))]
fn evaluate_reference<'py>(
    py: Python<'py>,
    price: Option<f64>,
    episodes: usize,
    seed: u64,
    config: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let env = env_config(config)?;
    let seeds = test_seeds(seed, episodes);
    let eval = match price {
        Some(p) if p > 0.0 => harness::evaluate(&ConstantPolicy { log_price: p.ln() }, &env, &seeds),
        Some(p) => return Err(ConfigError::new_err(format!("price must be positive, got {p}"))),
        None => {
            let (lo, hi) = env.market.log_action_bounds();
            harness::evaluate(&UniformPolicy { lo, hi }, &env, &seeds)
        }
    }
    .map_err(py_err)?;
    to_py(py, &eval.report)
}

/// Seasonal log-demand component at month index `t`.
#[pyfunction]
#[pyo3(signature = (t, config = ""))]
fn seasonal_value(t: usize, config: &str) -> PyResult<f64> {
    Ok(env_config(config)?.seasonal.value(t))
}

/// Least-squares Fourier coefficients as `[(k, a_k, b_k), ...]`.
#[pyfunction]
#[pyo3(signature = (months, values, harmonics = vec![1, 2, 3, 4, 6]))]
fn fit_seasonal(months: Vec<usize>, values: Vec<f64>, harmonics: Vec<u32>) -> PyResult<Vec<(u32, f64, f64)>> {
    if months.len() != values.len() {
        return Err(DataError::new_err("months and values differ in length"));
    }
    let series: Vec<(usize, f64)> = months.into_iter().zip(values).collect();
    let c = fit_coefficients(&series, &harmonics).map_err(py_err)?;
    Ok(c.harmonics().iter().map(|h| (h.k, h.a, h.b)).collect())
}

#[pyfunction]
fn log_diffs(prices: Vec<f64>) -> PyResult<Vec<f64>> {
    let months = (0..prices.len() as i64).collect();
    let s = analysis::PriceSeries::new("py", months, prices).map_err(py_err)?;
    analysis::log_diffs(&s).map_err(py_err)
}

/// Month-dummy regression; `months` are calendar months 1..=12.
#[pyfunction]
fn seasonal_regression<'py>(py: Python<'py>, months: Vec<u32>, diffs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    if months.len() != diffs.len() {
        return Err(DataError::new_err("months and diffs differ in length"));
    }
    let pairs: Vec<(u32, f64)> = months.into_iter().zip(diffs).collect();
    let est = analysis::seasonal_regression(&pairs).map_err(py_err)?;
    to_py(py, &est)
}

#[pyfunction]
fn volatility_std(diffs: Vec<f64>) -> PyResult<f64> {
    analysis::volatility_std(&diffs).map_err(py_err)
}

#[pyfunction]
fn kde(data: Vec<f64>, grid: Vec<f64>) -> PyResult<Vec<f64>> {
    analysis::kde(&data, &grid).map_err(py_err)
}

/// `(mean, half_width)` of the 95% interval.
#[pyfunction]
fn mean_ci(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    analysis::mean_ci(&samples).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "gas_storage")]
pub fn gas_storage_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_reference, m)?)?;
    m.add_function(wrap_pyfunction!(seasonal_value, m)?)?;
    m.add_function(wrap_pyfunction!(fit_seasonal, m)?)?;
    m.add_function(wrap_pyfunction!(log_diffs, m)?)?;
    m.add_function(wrap_pyfunction!(seasonal_regression, m)?)?;
    m.add_function(wrap_pyfunction!(volatility_std, m)?)?;
    m.add_function(wrap_pyfunction!(kde, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ci, m)?)?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("SimulationError", m.py().get_type::<SimulationError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
