//! Python bindings: system model, sampler, oracle, trained policies and the
//! training/compare commands.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use isgc_core::config::{self, ExperimentConfig, Preset};
use isgc_core::experiment::{self, Algo, LoadedPolicy};
use isgc_core::oracle;
use isgc_core::pipeline::{self, STATE_DIM, STATE_FIELDS};
use isgc_core::scenario::{self, DistConfig};
use isgc_core::trainer::{self, Env, EvalSet, Policy};
use isgc_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Parse { .. }
        | Error::UnknownKey { .. }
        | Error::Validation(_)
        | Error::Invalid(_)
        | Error::ShapeMismatch { .. } => PyValueError::new_err(e.to_string()),
        Error::MissingCheckpoint(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Fixed system constants; keyword arguments override defaults by name.
#[pyclass(name = "PipelineConstants", from_py_object)]
#[derive(Clone)]
struct PyConstants {
    inner: pipeline::PipelineConstants,
}

#[pymethods]
impl PyConstants {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = pipeline::PipelineConstants::default();
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                let name: String = k.extract()?;
                let slot = inner
                    .field_mut(&name)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown constant {name}")))?;
                *slot = v.extract()?;
            }
        }
        inner.validate().map_err(to_py)?;
        Ok(PyConstants { inner })
    }

    fn get(&self, name: &str) -> PyResult<f64> {
        self.inner
            .fields()
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PyValueError::new_err(format!("unknown constant {name}")))
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in self.inner.fields() {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("PipelineConstants({:?})", self.inner)
    }
}

/// One sampled network/compute snapshot.
#[pyclass(name = "EnvState", from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: pipeline::EnvState,
}

#[pymethods]
impl PyState {
    /// Ten values in the order of `EnvState.FIELDS`.
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        Ok(PyState {
            inner: pipeline::EnvState::from_slice(&values).map_err(to_py)?,
        })
    }

    #[classattr]
    #[allow(non_snake_case)]
    fn FIELDS() -> Vec<&'static str> {
        STATE_FIELDS.to_vec()
    }

    fn to_list(&self) -> Vec<f64> {
        self.inner.to_array().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("EnvState({:?})", self.inner.to_array())
    }
}

#[pyclass(name = "Allocation", from_py_object)]
#[derive(Clone)]
struct PyAllocation {
    #[pyo3(get, set)]
    w_sem: f64,
    #[pyo3(get, set)]
    w_aigc: f64,
    #[pyo3(get, set)]
    w_render: f64,
}

impl PyAllocation {
    fn core(&self) -> pipeline::Allocation {
        pipeline::Allocation::new(self.w_sem, self.w_aigc, self.w_render)
    }

    fn from_core(a: pipeline::Allocation) -> Self {
        PyAllocation {
            w_sem: a.w_sem,
            w_aigc: a.w_aigc,
            w_render: a.w_render,
        }
    }
}

#[pymethods]
impl PyAllocation {
    #[new]
    fn new(w_sem: f64, w_aigc: f64, w_render: f64) -> Self {
        PyAllocation {
            w_sem,
            w_aigc,
            w_render,
        }
    }

    fn total(&self) -> f64 {
        self.core().total()
    }

    fn __repr__(&self) -> String {
        format!(
            "Allocation({}, {}, {})",
            self.w_sem, self.w_aigc, self.w_render
        )
    }
}

fn consts_or_default(c: Option<PyRef<'_, PyConstants>>) -> pipeline::PipelineConstants {
    c.map(|c| c.inner).unwrap_or_default()
}

#[pyfunction]
#[pyo3(signature = (state, alloc, consts=None))]
fn utility(state: &PyState, alloc: &PyAllocation, consts: Option<PyRef<'_, PyConstants>>) -> f64 {
    pipeline::utility(&state.inner, &alloc.core(), &consts_or_default(consts))
}

#[pyfunction]
#[pyo3(signature = (state, alloc, consts=None))]
fn reward(state: &PyState, alloc: &PyAllocation, consts: Option<PyRef<'_, PyConstants>>) -> f64 {
    pipeline::reward(&state.inner, &alloc.core(), &consts_or_default(consts))
}

#[pyfunction]
#[pyo3(signature = (state, alloc, consts=None))]
fn feasible(state: &PyState, alloc: &PyAllocation, consts: Option<PyRef<'_, PyConstants>>) -> bool {
    pipeline::feasible(&state.inner, &alloc.core(), &consts_or_default(consts))
}

/// Latency terms and their total, keyed by name.
#[pyfunction]
#[pyo3(signature = (state, alloc, consts=None))]
fn latency<'py>(
    py: Python<'py>,
    state: &PyState,
    alloc: &PyAllocation,
    consts: Option<PyRef<'_, PyConstants>>,
) -> PyResult<Bound<'py, PyDict>> {
    let l = pipeline::latency_breakdown(&state.inner, &alloc.core(), &consts_or_default(consts))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("t_sem_comp", l.t_sem_comp)?;
    d.set_item("t_sem_comm", l.t_sem_comm)?;
    d.set_item("t_aigc_comp", l.t_aigc_comp)?;
    d.set_item("t_aigc_comm", l.t_aigc_comm)?;
    d.set_item("t_render_comp", l.t_render_comp)?;
    d.set_item("t_render_comm", l.t_render_comm)?;
    d.set_item("t_total", l.t_total)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (raw, consts=None))]
fn action_to_allocation(raw: [f64; 3], consts: Option<PyRef<'_, PyConstants>>) -> PyAllocation {
    PyAllocation::from_core(trainer::action_to_allocation(
        &raw,
        &consts_or_default(consts),
    ))
}

/// `n` states from the default distributions, reproducible by `seed`.
#[pyfunction]
fn sample_states(seed: u64, n: usize) -> Vec<PyState> {
    scenario::state_stream(seed, n, &DistConfig::default())
        .into_iter()
        .map(|inner| PyState { inner })
        .collect()
}

/// Grid-plus-refinement optimum: `{"alloc", "utility_star", "feasible"}`.
#[pyfunction]
#[pyo3(signature = (state, consts=None, resolution=oracle::DEFAULT_RESOLUTION))]
fn oracle_solve<'py>(
    py: Python<'py>,
    state: &PyState,
    consts: Option<PyRef<'_, PyConstants>>,
    resolution: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if resolution < 2 {
        return Err(PyValueError::new_err("resolution must be >= 2"));
    }
    let r = oracle::solve(&state.inner, &consts_or_default(consts), resolution);
    let d = PyDict::new(py);
    d.set_item("alloc", PyAllocation::from_core(r.alloc))?;
    d.set_item("utility_star", r.utility_star)?;
    d.set_item("feasible", r.feasible)?;
    Ok(d)
}

fn load_config(path: Option<PathBuf>, preset: Option<&str>) -> PyResult<ExperimentConfig> {
    let preset = match preset {
        Some(p) => Some(
            Preset::parse(p).ok_or_else(|| PyValueError::new_err(format!("unknown preset {p}")))?,
        ),
        None => None,
    };
    match path {
        Some(p) => config::parse_config(&p, preset),
        None => config::parse_str("", std::path::Path::new("<defaults>"), preset),
    }
    .map_err(to_py)
}

/// A trained policy loaded from a run directory (or `"oracle"`).
#[pyclass(name = "TrainedPolicy", unsendable)]
struct PyPolicy {
    inner: LoadedPolicy,
    consts: pipeline::PipelineConstants,
    dist: DistConfig,
}

#[pymethods]
impl PyPolicy {
    #[staticmethod]
    #[pyo3(signature = (run_dir, config=None))]
    fn load(run_dir: PathBuf, config: Option<PathBuf>) -> PyResult<Self> {
        let cfg = load_config(config, None)?;
        let inner = experiment::load_policy(&run_dir, &cfg, cfg.diffusion.oracle_resolution)
            .map_err(to_py)?;
        Ok(PyPolicy {
            inner,
            consts: cfg.consts,
            dist: cfg.dist,
        })
    }

    /// Greedy allocations; `seed` fixes the denoising noise of diffusion policies.
    #[pyo3(signature = (states, seed=0))]
    fn act(&mut self, states: Vec<PyState>, seed: u64) -> PyResult<Vec<PyAllocation>> {
        let states: Vec<pipeline::EnvState> = states.into_iter().map(|s| s.inner).collect();
        let env = Env::new(self.consts, self.dist);
        let norm = env.normalize_batch(&states);
        let mut stream = scenario::SeededStream::with_stream(seed, trainer::STREAM_EVAL);
        let d = self
            .inner
            .act(&states, norm.view(), &mut stream, false)
            .map_err(to_py)?;
        Ok(d.into_iter()
            .map(|d| PyAllocation::from_core(d.alloc))
            .collect())
    }

    /// Mean reward, mean utility and oracle ratio over `n_states` states drawn from `seed`.
    #[pyo3(signature = (n_states=1000, seed=1, resolution=oracle::DEFAULT_RESOLUTION))]
    fn evaluate<'py>(
        &mut self,
        py: Python<'py>,
        n_states: usize,
        seed: u64,
        resolution: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let env = Env::new(self.consts, self.dist);
        let set = EvalSet::new(&env, n_states, seed, resolution).map_err(to_py)?;
        let r = trainer::evaluate(&mut self.inner, &set, &self.consts).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("mean_reward", r.mean_reward)?;
        d.set_item("mean_utility", r.mean_utility)?;
        d.set_item("feasible_fraction", r.feasible_fraction)?;
        d.set_item("oracle_ratio", r.oracle_ratio)?;
        d.set_item("oracle_mean_utility", set.oracle.feasible_mean_utility)?;
        Ok(d)
    }
}

/// Trains `algo` ("diffusion" or "ppo") and writes artifacts to `out`.
/// Returns the final evaluation summary.
#[pyfunction]
#[pyo3(signature = (algo, out, seed=1, config=None, preset=None, epochs=None))]
fn train<'py>(
    py: Python<'py>,
    algo: &str,
    out: PathBuf,
    seed: u64,
    config: Option<PathBuf>,
    preset: Option<&str>,
    epochs: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let algo = match algo {
        "diffusion" => Algo::Diffusion,
        "ppo" => Algo::Ppo,
        other => return Err(PyValueError::new_err(format!("unknown algo {other}"))),
    };
    let mut cfg = load_config(config, preset)?;
    if let Some(e) = epochs {
        cfg.diffusion.epochs = e;
        cfg.ppo.epochs = e;
    }
    let s = py
        .detach(|| experiment::cmd_train(&cfg, algo, seed, &out))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("epochs", s.curve.rows.len())?;
    if let Some(e) = s.final_eval {
        d.set_item("mean_reward", e.mean_reward)?;
        d.set_item("mean_utility", e.mean_utility)?;
        d.set_item("oracle_ratio", e.oracle_ratio)?;
    }
    Ok(d)
}

/// Checks a config file; returns its canonical text.
#[pyfunction]
#[pyo3(signature = (path, preset=None))]
fn parse_config(path: PathBuf, preset: Option<&str>) -> PyResult<String> {
    Ok(load_config(Some(path), preset)?.serialize())
}

#[pymodule]
fn isgc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("STATE_DIM", STATE_DIM)?;
    m.add_class::<PyConstants>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyAllocation>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(utility, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(feasible, m)?)?;
    m.add_function(wrap_pyfunction!(latency, m)?)?;
    m.add_function(wrap_pyfunction!(action_to_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(sample_states, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_solve, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    Ok(())
}
