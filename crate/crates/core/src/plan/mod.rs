//! Plan representation: draft plans (natural-language steps) and
//! executable plans (SQL and LLM steps), with parsers, a serializer and a
//! schema-aware validator.

mod deps;
mod draft;
mod executable;
pub mod sql;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use deps::{final_table, llm_step_is_consumed, step_output_is_consumed};
pub use draft::{parse_draft_plan, serialize_draft_plan};
pub use executable::{parse_executable_plan, serialize_plan};
pub use validate::{validate_plan, Issue, IssueKind, SchemaRegistry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no plan steps found")]
    NoStepsFound,
    #[error("unknown step kind in line: {0}")]
    UnknownStepKind(String),
    #[error("LLM step {step} is missing field `{missing_field}`")]
    MalformedLlmStep { step: usize, missing_field: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepKind {
    #[serde(rename = "SQL")]
    Sql,
    #[serde(rename = "LLM")]
    Llm,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Sql => "SQL",
            StepKind::Llm => "LLM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DraftStep {
    pub index: usize,
    pub kind: StepKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlStep {
    /// One or more statements, kept as written.
    pub sql_text: String,
    pub output_table: String,
}

/// One generated column of an LLM step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmTarget {
    pub input_columns: Vec<String>,
    pub prompt: String,
    pub new_column: String,
}

/// Adds one column per target to `source_table`, computed row by row.
/// Merged steps carry several targets; parsed steps usually have one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmStep {
    pub reason: String,
    pub source_table: String,
    pub targets: Vec<LlmTarget>,
}

impl LlmStep {
    pub fn single(
        reason: impl Into<String>,
        source_table: impl Into<String>,
        input_columns: Vec<String>,
        prompt: impl Into<String>,
        new_column: impl Into<String>,
    ) -> Self {
        LlmStep {
            reason: reason.into(),
            source_table: source_table.into(),
            targets: vec![LlmTarget {
                input_columns,
                prompt: prompt.into(),
                new_column: new_column.into(),
            }],
        }
    }

    pub fn new_columns(&self) -> impl Iterator<Item = &str> {
        self.targets.iter().map(|t| t.new_column.as_str())
    }

    /// Union of input columns over all targets, in first-use order.
    pub fn input_columns(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.targets {
            for c in &t.input_columns {
                if !out.iter().any(|o| o.eq_ignore_ascii_case(c)) {
                    out.push(c);
                }
            }
        }
        out
    }
}

/// Name of the snapshot table an LLM step at 1-based `index` produces.
pub fn llm_snapshot_name(source_table: &str, index: usize) -> String {
    format!("{source_table}_llm{index}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanStep {
    #[serde(rename = "SQL")]
    Sql(SqlStep),
    #[serde(rename = "LLM")]
    Llm(LlmStep),
}

impl PlanStep {
    pub fn kind(&self) -> StepKind {
        match self {
            PlanStep::Sql(_) => StepKind::Sql,
            PlanStep::Llm(_) => StepKind::Llm,
        }
    }

    /// Table holding this step's result.
    pub fn output_table(&self) -> &str {
        match self {
            PlanStep::Sql(s) => &s.output_table,
            PlanStep::Llm(l) => &l.source_table,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub base_table: String,
    pub steps: Vec<PlanStep>,
}

impl Plan {
    pub fn new(base_table: impl Into<String>, steps: Vec<PlanStep>) -> Self {
        Plan {
            base_table: base_table.into(),
            steps,
        }
    }

    pub fn count(&self, kind: StepKind) -> usize {
        self.steps.iter().filter(|s| s.kind() == kind).count()
    }
}
