use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExecutionTrace, StepRecord};
use crate::llm::{fingerprint, CallLog};

/// Contents of `trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub run_id: String,
    pub question: String,
    pub base_table: String,
    pub final_table: String,
    pub fallback_used: bool,
    pub steps: Vec<StepRecord>,
    pub call_log: CallLog,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceFile {
    pub fn load(dir: &Path) -> io::Result<TraceFile> {
        let text = fs::read_to_string(dir.join("trace.json"))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Stable id derived from the run inputs.
pub fn run_id_for(parts: &[&str]) -> String {
    fingerprint(&parts.join("\u{1f}"))
}

/// Writes `<root>/<run_id>/` with the plan texts, one CSV per snapshot and
/// `trace.json`. Returns the run directory.
pub fn write_trace(
    root: &Path,
    file: &TraceFile,
    plan_text: &str,
    optimized_plan_text: Option<&str>,
    trace: Option<&ExecutionTrace>,
) -> io::Result<PathBuf> {
    let dir = root.join(&file.run_id);
    fs::create_dir_all(&dir)?;
    // Remove stale snapshots from an earlier run with the same id.
    for entry in fs::read_dir(&dir)? {
        let p = entry?.path();
        if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("step_") && n.ends_with(".csv")) {
            fs::remove_file(p)?;
        }
    }
    fs::write(dir.join("plan.txt"), plan_text)?;
    if let Some(opt) = optimized_plan_text {
        fs::write(dir.join("plan_optimized.txt"), opt)?;
    }
    if let Some(t) = trace {
        for s in &t.snapshots {
            let f = fs::File::create(dir.join(s.file_name()))?;
            s.table
                .write_delimited(f, b',')
                .map_err(|e| io::Error::other(e.to_string()))?;
        }
    }
    let json = serde_json::to_string_pretty(file).map_err(io::Error::other)?;
    fs::write(dir.join("trace.json"), json + "\n")?;
    Ok(dir)
}
