//! Python bindings: configuration, training, the tabular policy, arena
//! statements, rewards and the verifier helpers.
//!
//! Structured values (records, verdicts, configs) cross the boundary as
//! plain dicts and lists, converted through their JSON form.

use std::path::PathBuf;

use gar_core::arena::{
    self, ChainProof, ChainStatement, FusionAction, Pattern, ProverCodec, ProverContext, TargetMode,
};
use gar_core::grpo;
use gar_core::policy::{Policy, Prompt, TabularPolicy};
use gar_core::rewards::{self, FuserRewardInput, ProverRewardInput, RewardRules};
use gar_core::training::{self, RunConfig, Trainer};
use gar_core::verifier::{self, ClientConfig, MockAction, MockConfig, MockVerifier, VerifierClient, VerifyJob};
use gar_core::{GarError, VerdictStatus};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(
    gar_py,
    ConfigError,
    PyValueError,
    "A configuration key holds an unusable value."
);
create_exception!(
    gar_py,
    VerifierError,
    PyRuntimeError,
    "The verifier could not be reached."
);

fn err(e: GarError) -> PyErr {
    match e {
        GarError::Config { .. } => ConfigError::new_err(e.to_string()),
        GarError::Transport(_) => VerifierError::new_err(e.to_string()),
        GarError::Io(io) => PyOSError::new_err(io.to_string()),
        GarError::InvalidInput(_) | GarError::Parse(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Run configuration. Every field is a flat key, as in the TOML files.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by keyword arguments.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        Self {
            inner: RunConfig::default(),
        }
        .replace(py, overrides)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml_str(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    /// A copy with some keys changed; the result is validated.
    #[pyo3(signature = (**changes))]
    fn replace(&self, py: Python<'_>, changes: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let merged = self.to_dict(py)?;
        let merged = merged.bind(py).cast::<PyDict>()?.clone();
        if let Some(c) = changes {
            merged.update(c.as_mapping())?;
        }
        let inner: RunConfig = from_py(py, merged.as_any())?;
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    fn __getattr__(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        let d = self.to_dict(py)?;
        d.bind(py)
            .get_item(name)
            .map(Bound::unbind)
            .map_err(|_| pyo3::exceptions::PyAttributeError::new_err(format!("no config key `{name}`")))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(iterations={}, statements_per_iteration={}, proofs_per_statement={}, seed={})",
            self.inner.iterations,
            self.inner.statements_per_iteration,
            self.inner.proofs_per_statement,
            self.inner.seed
        )
    }
}

/// Drives training. With `out` set, the run log and checkpoint go there.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config, out=None, resume=false))]
    fn new(config: &PyConfig, out: Option<PathBuf>, resume: bool) -> PyResult<Self> {
        let mut cfg = config.inner.clone();
        if out.is_some() {
            cfg.checkpoint_dir = out;
        }
        let inner = if resume {
            Trainer::resume(cfg)
        } else {
            Trainer::new(cfg)
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// Runs one iteration and returns its record.
    fn step(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let out = self.inner.step().map_err(err)?;
        to_py(py, &out.record)
    }

    /// Runs the remaining iterations and returns every record.
    fn run(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let records = self.inner.run().map_err(err)?;
        to_py(py, &records)
    }

    #[getter]
    fn iteration(&self) -> u32 {
        self.inner.state().iteration
    }

    #[getter]
    fn finished(&self) -> bool {
        self.inner.is_finished()
    }

    #[getter]
    fn records(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.records())
    }

    /// The live prover policy (a copy).
    fn prover(&self) -> PyPolicy {
        PyPolicy {
            inner: self.inner.state().prover.clone(),
        }
    }

    fn fuser(&self) -> PyPolicy {
        PyPolicy {
            inner: self.inner.state().fuser.clone(),
        }
    }
}

/// Position-factorized softmax policy over `theta[context, position, token]`.
#[pyclass(name = "TabularPolicy", from_py_object)]
#[derive(Clone)]
struct PyPolicy {
    inner: TabularPolicy,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (contexts, positions, vocab, params=None))]
    fn new(contexts: usize, positions: usize, vocab: usize, params: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match params {
            Some(p) => TabularPolicy::from_params(contexts, positions, vocab, p),
            None => TabularPolicy::uniform(contexts, positions, vocab),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.contexts(), self.inner.positions(), self.inner.vocab_size())
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[setter]
    fn set_params(&mut self, theta: Vec<f64>) -> PyResult<()> {
        self.inner.set_params(&theta).map_err(err)
    }

    fn probs(&self, context: usize, position: usize) -> PyResult<Vec<f64>> {
        let (c, p, _) = self.shape();
        if context >= c || position >= p {
            return Err(PyValueError::new_err(format!(
                "row ({context}, {position}) outside ({c}, {p})"
            )));
        }
        Ok(self.inner.probs(context, position))
    }

    fn log_prob(&self, context: usize, response: Vec<usize>) -> PyResult<f64> {
        self.inner
            .log_prob(Prompt::new(context, response.len()), &response)
            .map_err(err)
    }

    fn grad_log_prob(&self, context: usize, response: Vec<usize>) -> PyResult<Vec<f64>> {
        self.inner
            .grad_log_prob(Prompt::new(context, response.len()), &response)
            .map_err(err)
    }

    fn sample(&self, context: usize, length: usize, count: usize, seed: u64) -> PyResult<Vec<Vec<usize>>> {
        self.inner
            .sample(Prompt::new(context, length), count, seed)
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        let (c, p, v) = self.shape();
        format!("TabularPolicy(contexts={c}, positions={p}, vocab={v})")
    }
}

/// A modular arithmetic chain: start at `x0`, apply `ops`, claim `target`.
#[pyclass(name = "ChainStatement", from_py_object)]
#[derive(Clone)]
struct PyChain {
    inner: ChainStatement,
}

fn parse_ops(py: Python<'_>, ops: Vec<String>) -> PyResult<Vec<arena::Op>> {
    ops.iter()
        .map(|o| from_py(py, &pyo3::types::PyString::new(py, o).into_any()))
        .collect()
}

#[pymethods]
impl PyChain {
    /// `ops` are strings such as `"add:3"` or `"mul:2"`.
    #[new]
    #[pyo3(signature = (modulus, x0, ops, target=None))]
    fn new(py: Python<'_>, modulus: u32, x0: u32, ops: Vec<String>, target: Option<u32>) -> PyResult<Self> {
        let mut inner = ChainStatement {
            modulus,
            x0,
            ops: parse_ops(py, ops)?,
            target: 0,
        };
        if modulus < 2 || x0 >= modulus || inner.ops.iter().any(|o| o.constant() >= modulus) {
            return Err(PyValueError::new_err("values must be residues of a modulus >= 2"));
        }
        inner.target = target.unwrap_or_else(|| inner.true_value());
        Ok(Self { inner })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<(String, Self)> {
        let (name, inner) = arena::parse_formal(text).map_err(err)?;
        Ok((name, Self { inner }))
    }

    #[getter]
    fn modulus(&self) -> u32 {
        self.inner.modulus
    }

    #[getter]
    fn x0(&self) -> u32 {
        self.inner.x0
    }

    #[getter]
    fn target(&self) -> u32 {
        self.inner.target
    }

    #[getter]
    fn ops(&self) -> Vec<String> {
        self.inner
            .ops
            .iter()
            .map(|o| {
                serde_json::to_value(o)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            })
            .collect()
    }

    #[getter]
    fn difficulty(&self) -> usize {
        self.inner.difficulty()
    }

    fn trajectory(&self) -> Vec<u32> {
        self.inner.trajectory()
    }

    fn true_value(&self) -> u32 {
        self.inner.true_value()
    }

    fn is_solvable(&self) -> bool {
        self.inner.is_solvable()
    }

    /// `(prefix_length, value)` of the weakened goal, or None.
    fn weakened_goal(&self) -> Option<(usize, u32)> {
        self.inner.weakened_goal()
    }

    /// Checks a proof and returns the verdict as a dict.
    fn verify(&self, py: Python<'_>, declared_target: u32, values: Vec<u32>) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &arena::verify(
                &self.inner,
                &ChainProof {
                    declared_target,
                    values,
                },
            ),
        )
    }

    /// Fuses two statements. `pattern` is `concat_ab`, `concat_ba` or
    /// `interleave`; `offset = 0` keeps the true target.
    #[pyo3(signature = (other, pattern="concat_ab", rounds=1, offset=0))]
    fn fuse(&self, py: Python<'_>, other: &PyChain, pattern: &str, rounds: u32, offset: u32) -> PyResult<Self> {
        let pattern: Pattern = from_py(py, &pyo3::types::PyString::new(py, pattern).into_any())?;
        let target_mode = if offset == 0 {
            TargetMode::TrueTarget
        } else {
            TargetMode::Perturbed { offset }
        };
        let action = FusionAction {
            pattern,
            rounds,
            target_mode,
        };
        Ok(Self {
            inner: arena::fuse(&self.inner, &other.inner, action).map_err(err)?,
        })
    }

    #[pyo3(signature = (name="t"))]
    fn render(&self, name: &str) -> String {
        arena::render_formal(name, &self.inner)
    }

    fn render_informal(&self) -> String {
        arena::render_informal(&self.inner)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("ChainStatement({})", arena::render_formal("t", &self.inner))
    }
}

/// Exact clean-pass probability of a prover policy on a statement.
#[pyfunction]
#[pyo3(signature = (policy, statement, max_difficulty=30, context="shared", budget=10_000_000))]
fn exact_pass_probability(
    policy: &PyPolicy,
    statement: &PyChain,
    max_difficulty: usize,
    context: &str,
    budget: u128,
) -> PyResult<f64> {
    let context = match context {
        "shared" => ProverContext::Shared,
        "length" => ProverContext::Length,
        other => return Err(PyValueError::new_err(format!("unknown context `{other}`"))),
    };
    let codec = ProverCodec {
        modulus: statement.inner.modulus,
        max_difficulty,
        context,
    };
    arena::exact_pass_probability(&policy.inner, &codec, &statement.inner, budget).map_err(err)
}

/// Base prover policy for the given modulus and maximum difficulty.
#[pyfunction]
#[pyo3(signature = (modulus=5, max_difficulty=30, context="shared"))]
fn prover_prior(modulus: u32, max_difficulty: usize, context: &str) -> PyResult<PyPolicy> {
    let context = match context {
        "shared" => ProverContext::Shared,
        "length" => ProverContext::Length,
        other => return Err(PyValueError::new_err(format!("unknown context `{other}`"))),
    };
    let codec = ProverCodec {
        modulus,
        max_difficulty,
        context,
    };
    Ok(PyPolicy {
        inner: codec.prior().map_err(err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (pass_rate, modification_rate, compile_ok=true, penalty=true))]
fn fuser_reward(pass_rate: f64, modification_rate: f64, compile_ok: bool, penalty: bool) -> PyResult<f64> {
    RewardRules {
        modification_penalty: penalty,
    }
    .fuser_reward(FuserRewardInput {
        pass_rate,
        modification_rate,
        compile_ok,
    })
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (passed, modified, penalty=true))]
fn prover_reward(passed: bool, modified: bool, penalty: bool) -> f64 {
    RewardRules {
        modification_penalty: penalty,
    }
    .prover_reward(ProverRewardInput { passed, modified })
}

#[pyfunction]
fn group_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(rewards::group_advantages(&rewards).map_err(err)?.advantages)
}

#[pyfunction]
fn prob_ratio(logp_new: f64, logp_old: f64) -> PyResult<f64> {
    grpo::prob_ratio(logp_new, logp_old).map_err(err)
}

#[pyfunction]
fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    grpo::clipped_surrogate(ratio, advantage, epsilon)
}

#[pyfunction]
fn kl_estimate(logp_new: f64, logp_ref: f64) -> PyResult<f64> {
    grpo::kl_estimate(logp_new, logp_ref).map_err(err)
}

#[pyfunction]
fn detect_modification(original: &str, proof: &str) -> bool {
    verifier::detect_modification(original, proof)
}

#[pyfunction]
fn contains_escape_tactic(proof: &str) -> bool {
    verifier::contains_escape_tactic(proof)
}

/// Reads a run log into `{"config": {...}, "records": [...]}`.
#[pyfunction]
fn read_run_log(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let log = training::read_run_log(&path).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("config", to_py(py, &log.config)?)?;
    out.set_item("records", to_py(py, &log.records())?)?;
    Ok(out.into_any().unbind())
}

/// Metrics table (CSV text) for a list of record dicts.
#[pyfunction]
fn metrics_csv(py: Python<'_>, records: &Bound<'_, PyAny>) -> PyResult<String> {
    let records: Vec<gar_core::IterationRecord> = from_py(py, records)?;
    Ok(training::metrics_csv(&records))
}

fn parse_status(s: &str) -> PyResult<VerdictStatus> {
    Ok(match s {
        "pass" => VerdictStatus::Pass,
        "fail" => VerdictStatus::Fail,
        "error" => VerdictStatus::Error,
        "timeout" => VerdictStatus::Timeout,
        other => return Err(PyValueError::new_err(format!("unknown status `{other}`"))),
    })
}

/// In-process mock verifier on an ephemeral port. Rules are
/// `(pattern, action)` with action `pass`, `fail`, `error`, `timeout`,
/// `crash` or `sleep:SECS`; the fallback is a status or `arena`.
#[pyclass(name = "MockVerifier", unsendable)]
struct PyMock {
    inner: Option<MockVerifier>,
    endpoint: String,
}

#[pymethods]
impl PyMock {
    #[new]
    #[pyo3(signature = (fallback="pass", rules=Vec::new()))]
    fn new(fallback: &str, rules: Vec<(String, String)>) -> PyResult<Self> {
        let mut config = if fallback == "arena" {
            MockConfig::arena()
        } else {
            MockConfig {
                rules: Vec::new(),
                fallback: verifier::Fallback::Respond(parse_status(fallback)?),
            }
        };
        for (pattern, action) in rules {
            let action = match action.as_str() {
                "crash" => MockAction::Crash,
                a if a.starts_with("sleep:") => {
                    let secs: f64 = a["sleep:".len()..]
                        .parse()
                        .map_err(|_| PyValueError::new_err(format!("bad sleep `{a}`")))?;
                    MockAction::Sleep(
                        std::time::Duration::try_from_secs_f64(secs)
                            .map_err(|e| PyValueError::new_err(e.to_string()))?,
                    )
                }
                a => MockAction::Respond(parse_status(a)?),
            };
            config = config.rule(pattern, action);
        }
        let mock = MockVerifier::spawn(config).map_err(err)?;
        Ok(Self {
            endpoint: mock.endpoint(),
            inner: Some(mock),
        })
    }

    #[getter]
    fn endpoint(&self) -> String {
        self.endpoint.clone()
    }

    /// Stops the server.
    fn close(&mut self) {
        self.inner = None;
    }
}

/// Sends jobs (dicts with `job_id`, `statement`, `proof` and optionally
/// `timeout`) to a verifier and returns one result dict per job, in order.
#[pyfunction]
#[pyo3(signature = (endpoint, jobs, workers=8, timeout=60.0))]
fn submit_batch(
    py: Python<'_>,
    endpoint: String,
    jobs: &Bound<'_, PyAny>,
    workers: usize,
    timeout: f64,
) -> PyResult<Py<PyAny>> {
    let client = VerifierClient::new(ClientConfig {
        endpoint,
        workers,
        timeout_secs: timeout,
    })
    .map_err(err)?;
    let raw: Vec<serde_json::Map<String, serde_json::Value>> = from_py(py, jobs)?;
    let jobs = raw
        .into_iter()
        .map(|mut j| {
            j.entry("timeout").or_insert(serde_json::json!(timeout));
            serde_json::from_value::<VerifyJob>(serde_json::Value::Object(j))
                .map_err(|e| PyValueError::new_err(e.to_string()))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let results = py.detach(|| client.submit_batch(&jobs)).map_err(err)?;
    to_py(py, &results)
}

#[pymodule]
fn gar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrainer>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyMock>()?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("VerifierError", m.py().get_type::<VerifierError>())?;
    m.add_function(wrap_pyfunction!(exact_pass_probability, m)?)?;
    m.add_function(wrap_pyfunction!(prover_prior, m)?)?;
    m.add_function(wrap_pyfunction!(fuser_reward, m)?)?;
    m.add_function(wrap_pyfunction!(prover_reward, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(prob_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_surrogate, m)?)?;
    m.add_function(wrap_pyfunction!(kl_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_modification, m)?)?;
    m.add_function(wrap_pyfunction!(contains_escape_tactic, m)?)?;
    m.add_function(wrap_pyfunction!(read_run_log, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_csv, m)?)?;
    m.add_function(wrap_pyfunction!(submit_batch, m)?)?;
    Ok(())
}
