//! Python bindings: models, mutation, execution, comparison and campaigns.
//!
//! Structured results (traces, reports, summaries) cross the boundary as
//! plain dicts and lists built from their JSON form.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use graphmut::backends::{execute as run_backend, AdapterCommand, Backend, ExecutionTrace};
use graphmut::campaign::{campaign_input, read_jsonl, run_campaign_file, RESULTS_FILE};
use graphmut::engine::{legality_check, CampaignConfig};
use graphmut::ir::native::{from_native, model_hash, read_model, to_native, write_model};
use graphmut::ir::onnx::{export_onnx, import_onnx};
use graphmut::ir::{generate_seed, validate_graph, SeedKind};
use graphmut::operators::{self, MutationOperator, MutationSite, OperatorCode};
use graphmut::oracles::{layer_distance, rate_series, run_oracles, TraceSet};
use graphmut::stats::operator_stats;
use graphmut::{GraphModel, Tensor};

create_exception!(graphmut_py, GraphmutError, PyException);

fn err(e: graphmut::Error) -> PyErr {
    GraphmutError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, value: serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(&value).map_err(|e| GraphmutError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A computation graph.
#[pyclass(name = "Model", module = "graphmut_py", skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: GraphModel,
}

#[pymethods]
impl PyModel {
    /// Built-in seed: `tiny-cnn`, `tiny-mlp` or `tiny-resblock`.
    #[staticmethod]
    #[pyo3(signature = (kind, rng_seed = 0))]
    fn seed(kind: &str, rng_seed: u64) -> PyResult<Self> {
        let kind = SeedKind::from_name(kind).ok_or_else(|| GraphmutError::new_err(format!("unknown seed `{kind}`")))?;
        Ok(Self {
            inner: generate_seed(kind, rng_seed),
        })
    }

    /// Reads native JSON, or ONNX when the path ends in `.onnx`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_model(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_model(&path, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn from_native(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: from_native(text).map_err(err)?,
        })
    }

    fn to_native(&self) -> String {
        to_native(&self.inner)
    }

    #[staticmethod]
    fn from_onnx(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: import_onnx(data).map_err(err)?,
        })
    }

    fn to_onnx<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = export_onnx(&self.inner).map_err(err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[getter]
    fn hash(&self) -> String {
        model_hash(&self.inner)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn node_ids(&self) -> Vec<String> {
        self.inner.nodes.iter().map(|n| n.id.clone()).collect()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input.shape.clone()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    /// Violations as strings; empty when the model is valid.
    fn validate(&self) -> Vec<String> {
        validate_graph(&self.inner)
            .violations
            .iter()
            .map(|v| match &v.node {
                Some(n) => format!("{n}: {}", v.message),
                None => v.message.clone(),
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, {} nodes)", self.inner.name, self.inner.len())
    }
}

/// One run of one model on one backend.
#[pyclass(name = "Trace", module = "graphmut_py", from_py_object)]
#[derive(Clone)]
struct PyTrace {
    inner: ExecutionTrace,
}

#[pymethods]
impl PyTrace {
    #[getter]
    fn backend_id(&self) -> String {
        self.inner.backend_id.clone()
    }

    #[getter]
    fn completed(&self) -> bool {
        self.inner.completed()
    }

    /// `(stage, signature)` of the first crash, or None.
    #[getter]
    fn crash(&self) -> Option<(String, String)> {
        self.inner
            .crash()
            .map(|(s, sig)| (s.name().to_string(), sig.to_string()))
    }

    #[getter]
    fn layers(&self) -> Vec<String> {
        self.inner.layer_outputs.iter().map(|l| l.node.clone()).collect()
    }

    /// `{name: (shape, values)}` for the model outputs.
    #[getter]
    fn outputs(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.inner
            .outputs
            .iter()
            .map(|o| (o.node.clone(), o.tensor.shape.clone(), o.tensor.data.clone()))
            .collect()
    }

    fn layer(&self, node: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.inner.layer(node).map(|t| (t.shape.clone(), t.data.clone()))
    }

    #[getter]
    fn total_ms(&self) -> f64 {
        self.inner.total_ms
    }

    #[getter]
    fn peak_mem_bytes(&self) -> u64 {
        self.inner.peak_mem_bytes
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| GraphmutError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(|e| GraphmutError::new_err(e.to_string()))?,
        })
    }

    fn __repr__(&self) -> String {
        let state = match self.inner.crash() {
            Some((s, _)) => format!("crashed at {}", s.name()),
            None => "completed".into(),
        };
        format!("Trace({:?}, {state})", self.inner.backend_id)
    }
}

fn operator(op: &str, params: Option<Vec<(String, f64)>>) -> PyResult<MutationOperator> {
    let code: OperatorCode = op.parse().map_err(err)?;
    let mut op = MutationOperator::new(code);
    for (k, v) in params.unwrap_or_default() {
        op = op.with_param(&k, v).map_err(err)?;
    }
    Ok(op)
}

/// Sites `op` can act on, as `id` or `id:detail` strings.
#[pyfunction]
fn applicable_sites(model: &PyModel, op: &str) -> PyResult<Vec<String>> {
    let op = operator(op, None)?;
    Ok(operators::applicable_sites(&model.inner, &op)
        .iter()
        .map(ToString::to_string)
        .collect())
}

/// Applies one operator at one site; `seed` drives the operator's randomness.
#[pyfunction]
#[pyo3(signature = (model, op, site, seed = 0, params = None))]
fn mutate(model: &PyModel, op: &str, site: &str, seed: u64, params: Option<Vec<(String, f64)>>) -> PyResult<PyModel> {
    let op = operator(op, params)?;
    let site: MutationSite = site.parse().map_err(err)?;
    let out = operators::apply_seeded(&model.inner, &op, &site, seed).map_err(err)?;
    Ok(PyModel { inner: out.model })
}

/// Runs a model on `reference`, `optimized`, `faulty` or `external:CMD`.
/// Without `input` a uniform [-1, 1) tensor fixed by `seed` is used.
#[pyfunction]
#[pyo3(signature = (model, backend, input = None, seed = 0))]
fn execute(py: Python<'_>, model: &PyModel, backend: &str, input: Option<Vec<f32>>, seed: u64) -> PyResult<PyTrace> {
    let backend: Backend = match backend.strip_prefix("external:") {
        Some(cmd) => Backend::External(AdapterCommand::parse(cmd).map_err(err)?),
        None => backend.parse().map_err(err)?,
    };
    let x = match input {
        Some(data) => Tensor::new(model.inner.input.shape.clone(), data).map_err(err)?,
        None => campaign_input(&model.inner, seed),
    };
    let capture = CampaignConfig::default().capture();
    let m = model.inner.clone();
    let trace = py.detach(move || run_backend(&backend, &m, &x, &capture)).map_err(err)?;
    Ok(PyTrace { inner: trace })
}

/// Per-layer distances and change rates between two traces.
#[pyfunction]
fn compare<'py>(py: Python<'py>, a: &PyTrace, b: &PyTrace) -> PyResult<Bound<'py, PyAny>> {
    let d = layer_distance(&a.inner, &b.inner).map_err(err)?;
    let r = rate_series(&d, &CampaignConfig::default().oracle);
    json_to_py(py, serde_json::json!({ "distance": d, "rate": r }))
}

/// Legality and oracle verdicts for traces of the same model.
#[pyfunction]
fn check<'py>(py: Python<'py>, model: &PyModel, traces: Vec<PyTrace>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = CampaignConfig::default();
    let set: TraceSet = traces
        .into_iter()
        .map(|t| (t.inner.backend_id.clone(), t.inner))
        .collect();
    let legality = legality_check(&set, &cfg).map_err(err)?;
    let reports = if legality.is_legal() {
        run_oracles(&set, &model.inner, "-", &cfg.oracle)
    } else {
        Vec::new()
    };
    json_to_py(py, serde_json::json!({ "legality": legality, "reports": reports }))
}

/// Runs a campaign from a TOML config file and returns its summary.
#[pyfunction]
#[pyo3(signature = (config, out, budget = None))]
fn run_campaign<'py>(py: Python<'py>, config: PathBuf, out: PathBuf, budget: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
    let result = py
        .detach(move || run_campaign_file(&config, budget, &out))
        .map_err(err)?;
    let summary = serde_json::to_value(result.summary()).map_err(|e| GraphmutError::new_err(e.to_string()))?;
    json_to_py(py, summary)
}

/// Renders the per-operator statistics table of a campaign directory.
#[pyfunction]
fn stats(dir: PathBuf) -> PyResult<String> {
    let results = read_jsonl(&dir.join(RESULTS_FILE)).map_err(err)?;
    Ok(operator_stats(&results).render())
}

#[pymodule]
fn graphmut_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GraphmutError", m.py().get_type::<GraphmutError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(applicable_sites, m)?)?;
    m.add_function(wrap_pyfunction!(mutate, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    Ok(())
}
