//! Python bindings. Structured results cross the boundary as JSON and are
//! decoded with the `json` module on the Python side.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tabweave::eval;
use tabweave::llm::{Gateway, GatewayConfig};
use tabweave::optimizer::{optimize, OptimizerConfig};
use tabweave::pipeline::{self, BackendSpec, PipelineConfig};
use tabweave::plan::{parse_executable_plan, serialize_plan};
use tabweave::table::{load_table, LoadOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (v.to_string(),))?.unbind())
}

fn config_from(config_toml: Option<&str>, backend: Option<&str>) -> PyResult<PipelineConfig> {
    let mut cfg = match config_toml {
        Some(t) => PipelineConfig::from_toml(t).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(b) = backend {
        cfg.backend = Some(b.to_string());
    }
    Ok(cfg)
}

/// Answers `question` over the CSV table at `table_path`.
///
/// Returns a dict with the answer, the executed plan text, optimization
/// counts and the calls made. Raises `RuntimeError` when the run fails.
#[pyfunction]
#[pyo3(signature = (table_path, question, backend, paragraph=None, config_toml=None))]
fn answer_question(
    py: Python<'_>,
    table_path: &str,
    question: &str,
    backend: &str,
    paragraph: Option<&str>,
    config_toml: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let cfg = config_from(config_toml, Some(backend))?;
    let gateway = cfg.gateway().map_err(value_err)?;
    let path = std::path::Path::new(table_path);
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    let file = std::fs::File::open(path).map_err(value_err)?;
    let table = load_table(file, &LoadOptions::named(name)).map_err(value_err)?;
    let r = pipeline::answer_question(&table, question, paragraph, &gateway, &cfg)
        .map_err(|f| PyRuntimeError::new_err(f.to_string()))?;
    let calls: Vec<&str> = r.call_log.entries.iter().map(|e| e.template_id.as_str()).collect();
    let value = serde_json::json!({
        "answer": r.answer,
        "plan": r.plan_executable_text,
        "executed_plan": serialize_plan(r.executed_plan()),
        "final_table": r.trace.final_table,
        "fallback_used": r.trace.fallback_used,
        "stats": r.stats,
        "calls": calls,
    });
    to_py(py, &value)
}

/// Applies the rule-based rewrites. Returns `(plan_text, stats)`.
#[pyfunction]
#[pyo3(signature = (plan_text, base_table="table"))]
fn optimize_plan(py: Python<'_>, plan_text: &str, base_table: &str) -> PyResult<(String, Py<PyAny>)> {
    let plan = parse_executable_plan(plan_text, base_table).map_err(value_err)?;
    let (optimized, stats) = optimize(&plan, &OptimizerConfig::default());
    let stats = serde_json::to_value(stats).map_err(value_err)?;
    Ok((serialize_plan(&optimized), to_py(py, &stats)?))
}

/// Parses code-generation output and returns it in canonical form.
#[pyfunction]
#[pyo3(signature = (plan_text, base_table="table"))]
fn normalize_plan(plan_text: &str, base_table: &str) -> PyResult<String> {
    let plan = parse_executable_plan(plan_text, base_table).map_err(value_err)?;
    Ok(serialize_plan(&plan))
}

#[pyfunction]
fn exact_match(pred: &str, gold: &str) -> bool {
    eval::exact_match(pred, gold)
}

/// Returns `"match"`, `"mismatch"` or `"needs_review"`. Without a backend
/// no normalization is attempted.
#[pyfunction]
#[pyo3(signature = (pred, gold, question="", backend=None))]
fn relaxed_exact_match(pred: &str, gold: &str, question: &str, backend: Option<&str>) -> PyResult<String> {
    let table = tabweave::table::Table::new("answers", Vec::new()).map_err(value_err)?;
    let verdict = match backend {
        Some(b) => {
            let backend = BackendSpec::parse(b).and_then(|s| s.build(None)).map_err(value_err)?;
            let gw = Gateway::new(backend, GatewayConfig::default());
            eval::relaxed_exact_match(pred, gold, question, &table, &gw).verdict
        }
        None if eval::exact_match(pred, gold) => eval::RemVerdict::Match,
        None => eval::RemVerdict::Mismatch,
    };
    Ok(serde_json::to_value(verdict)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default())
}

/// Runs the command-line program. Returns `(status, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("tabweave".to_string()).chain(args);
    let code = tabweave::cli::dispatch(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8_lossy(&out).into_owned(),
        String::from_utf8_lossy(&err).into_owned(),
    )
}

#[pymodule]
#[pyo3(name = "tabweave")]
fn tabweave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(answer_question, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_plan, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_plan, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(relaxed_exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
