//! Sequential plan execution with per-step snapshots and fallback to the
//! last good intermediate table.

mod adapt;
mod engine;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapt::adapt_sql;
pub use engine::Engine;
pub use trace::{run_id_for, write_trace, TraceFile};

use crate::llm::{BatchRequest, CallLog, ColumnRequest, Gateway, LlmError, TargetSpec};
use crate::plan::sql::{classify, created_table, referenced_tables, split_statements, StatementKind};
use crate::plan::{llm_snapshot_name, LlmStep, Plan, PlanStep, SqlStep, StepKind};
use crate::table::{infer_column, Column, Table, DEFAULT_NULL_TOKENS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("engine unavailable: {0}")]
    EngineUnavailable(String),
}

/// Why a single step failed. Recorded in the trace, never raised.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("SQL error: {0}")]
    Sql(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("new column `{0}` already exists")]
    ColumnCollision(String),
    #[error("step produced no table")]
    NoOutput,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl StepError {
    pub fn is_backend_failure(&self) -> bool {
        match self {
            StepError::Llm(LlmError::Backend(_)) => true,
            StepError::Llm(LlmError::StepFailed { cause, .. }) => matches!(**cause, LlmError::Backend(_)),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub kind: StepKind,
    pub input_table: String,
    pub output_table: String,
    pub status: StepStatus,
    /// Snapshot file name (`step_<index>.csv`) for ok steps.
    pub snapshot: Option<String>,
    pub rows: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// 0 for the base table.
    pub step: usize,
    pub table: Table,
}

impl Snapshot {
    pub fn file_name(&self) -> String {
        format!("step_{}.csv", self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub steps: Vec<StepRecord>,
    pub final_table: String,
    pub fallback_used: bool,
    pub call_log: CallLog,
    /// Base table first, then one per ok step.
    pub snapshots: Vec<Snapshot>,
    /// First step failure, if any.
    pub failure: Option<StepError>,
}

impl ExecutionTrace {
    /// Contents of the final table.
    pub fn final_result(&self) -> &Table {
        &self.snapshots.last().expect("base snapshot always present").table
    }
}

/// Inputs LLM steps need besides the table itself.
#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    pub question: String,
    /// Appended to LLM step prompts (e.g. a filtered passage).
    pub context: Option<String>,
}

fn sql_err(e: rusqlite::Error) -> StepError {
    StepError::Sql(e.to_string())
}

/// Whether `stmt`'s query reads `name`.
fn reads(stmt: &str, name: &str) -> bool {
    referenced_tables(stmt).iter().any(|t| t.eq_ignore_ascii_case(name))
}

/// Runs one SQL step and returns the name of the table holding its result.
fn run_sql_step(engine: &Engine, step: &SqlStep) -> Result<String, StepError> {
    let adapted = adapt_sql(&step.sql_text);
    let stmts = split_statements(&adapted);
    if stmts.is_empty() {
        return Err(StepError::NoOutput);
    }
    let mut created: Option<String> = None;
    let mut touched: Option<String> = None;
    for (k, stmt) in stmts.iter().enumerate() {
        let last = k + 1 == stmts.len();
        match classify(stmt) {
            StatementKind::CreateTableAs { name, select } => {
                // Regenerated plans often reuse names; replace unless self-referencing.
                if engine.exists(&name) && !reads(&select, &name) {
                    engine.drop_table(&name).map_err(sql_err)?;
                }
                engine.execute(stmt).map_err(sql_err)?;
                created = Some(name);
            }
            StatementKind::Select if last => {
                let out = &step.output_table;
                if engine.exists(out) && !reads(stmt, out) {
                    engine.drop_table(out).map_err(sql_err)?;
                }
                engine
                    .execute(&format!("CREATE TABLE {} AS {stmt}", engine::quote_ident(out)))
                    .map_err(sql_err)?;
                created = Some(out.clone());
            }
            StatementKind::Select => engine.execute(stmt).map_err(sql_err)?,
            StatementKind::Other => {
                engine.execute(stmt).map_err(sql_err)?;
                if let Some(c) = created_table(stmt) {
                    created = Some(c);
                } else if let Some(t) = referenced_tables(stmt).into_iter().next() {
                    touched = Some(t);
                }
            }
        }
    }
    if engine.exists(&step.output_table) {
        return Ok(step.output_table.clone());
    }
    created
        .or(touched)
        .filter(|t| engine.exists(t))
        .ok_or(StepError::NoOutput)
}

/// Adds the step's new columns to its source table, in place. The augmented
/// table is also stored as `<source>_llm<index>`.
pub fn execute_llm_step(
    step: &LlmStep,
    index: usize,
    engine: &Engine,
    gateway: &Gateway,
    opts: &ExecOptions,
) -> Result<Table, StepError> {
    let source = engine
        .resolve(&step.source_table)
        .ok_or_else(|| StepError::UnknownTable(step.source_table.clone()))?;
    let table = engine.read(&source).map_err(sql_err)?;
    let mut inputs: Vec<String> = Vec::new();
    for name in step.input_columns() {
        let col = table.column(name).ok_or_else(|| StepError::UnknownColumn(name.to_string()))?;
        inputs.push(col.name.clone());
    }
    for (k, new) in step.new_columns().enumerate() {
        if table.column(new).is_some() || step.new_columns().take(k).any(|n| n.eq_ignore_ascii_case(new)) {
            return Err(StepError::ColumnCollision(new.to_string()));
        }
    }
    let rows: Vec<Vec<String>> = (0..table.row_count())
        .map(|r| {
            inputs
                .iter()
                .map(|c| table.column(c).expect("checked above").values[r].to_prompt_text())
                .collect()
        })
        .collect();
    let generated: Vec<Vec<String>> = if table.row_count() == 0 {
        step.targets.iter().map(|_| Vec::new()).collect()
    } else if step.targets.len() == 1 {
        let t = &step.targets[0];
        let cols: Vec<String> = t
            .input_columns
            .iter()
            .map(|c| table.column(c).expect("checked above").name.clone())
            .collect();
        let idx: Vec<usize> = cols.iter().map(|c| inputs.iter().position(|i| i == c).expect("subset")).collect();
        vec![gateway.generate_column(&ColumnRequest {
            input_columns: cols,
            rows: rows.iter().map(|r| idx.iter().map(|&i| r[i].clone()).collect()).collect(),
            new_column: t.new_column.clone(),
            step_prompt: t.prompt.clone(),
            question: opts.question.clone(),
            context: opts.context.clone(),
        })?]
    } else {
        gateway.generate_columns_batched(&BatchRequest {
            input_columns: inputs.clone(),
            rows,
            targets: step
                .targets
                .iter()
                .map(|t| TargetSpec {
                    new_column: t.new_column.clone(),
                    prompt: t.prompt.clone(),
                    input_columns: t.input_columns.clone(),
                })
                .collect(),
            question: opts.question.clone(),
            context: opts.context.clone(),
        })?
    };
    let nulls: Vec<String> = DEFAULT_NULL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut out = table;
    for (t, values) in step.targets.iter().zip(generated) {
        let (ty, cells) = infer_column(&values, &nulls);
        out = out
            .with_column(Column::new(t.new_column.clone(), ty, cells))
            .map_err(|_| StepError::ColumnCollision(t.new_column.clone()))?;
    }
    engine
        .load(&llm_snapshot_name(&source, index), &out)
        .map_err(sql_err)?;
    engine.load(&source, &out).map_err(sql_err)?;
    Ok(out)
}

/// Executes `plan` against `base`, stopping at the first failed step.
pub fn execute_plan(plan: &Plan, base: &Table, gateway: &Gateway, opts: &ExecOptions) -> Result<ExecutionTrace, ExecError> {
    let engine = Engine::new()?;
    execute_plan_with(plan, base, gateway, opts, &engine)
}

/// Like [`execute_plan`] on a caller-provided engine.
pub fn execute_plan_with(
    plan: &Plan,
    base: &Table,
    gateway: &Gateway,
    opts: &ExecOptions,
    engine: &Engine,
) -> Result<ExecutionTrace, ExecError> {
    let calls_before = gateway.call_log().len();
    let base_named = base.renamed(plan.base_table.clone());
    engine
        .load(&plan.base_table, &base_named)
        .map_err(|e| ExecError::EngineUnavailable(e.to_string()))?;
    let mut snapshots = vec![Snapshot {
        step: 0,
        table: base_named,
    }];
    let mut records = Vec::with_capacity(plan.steps.len());
    let mut final_table = plan.base_table.clone();
    let mut failure: Option<StepError> = None;
    for (i, step) in plan.steps.iter().enumerate() {
        let index = i + 1;
        let (input_table, planned_output) = match step {
            PlanStep::Sql(s) => (
                split_statements(&s.sql_text)
                    .iter()
                    .flat_map(|st| referenced_tables(st))
                    .next()
                    .unwrap_or_default(),
                s.output_table.clone(),
            ),
            PlanStep::Llm(l) => (l.source_table.clone(), l.source_table.clone()),
        };
        if failure.is_some() {
            records.push(StepRecord {
                index,
                kind: step.kind(),
                input_table,
                output_table: planned_output,
                status: StepStatus::Skipped,
                snapshot: None,
                rows: None,
                error: None,
            });
            continue;
        }
        let result = match step {
            PlanStep::Sql(s) => run_sql_step(engine, s).and_then(|name| {
                let t = engine.read(&name).map_err(sql_err)?;
                Ok((name, t))
            }),
            PlanStep::Llm(l) => execute_llm_step(l, index, engine, gateway, opts).map(|t| (t.name().to_string(), t)),
        };
        match result {
            Ok((name, table)) => {
                let snap = Snapshot { step: index, table };
                records.push(StepRecord {
                    index,
                    kind: step.kind(),
                    input_table,
                    output_table: name.clone(),
                    status: StepStatus::Ok,
                    snapshot: Some(snap.file_name()),
                    rows: Some(snap.table.row_count()),
                    error: None,
                });
                snapshots.push(snap);
                final_table = name;
            }
            Err(e) => {
                records.push(StepRecord {
                    index,
                    kind: step.kind(),
                    input_table,
                    output_table: planned_output,
                    status: StepStatus::Failed,
                    snapshot: None,
                    rows: None,
                    error: Some(e.to_string()),
                });
                failure = Some(e);
            }
        }
    }
    let log = gateway.call_log();
    Ok(ExecutionTrace {
        steps: records,
        final_table,
        fallback_used: failure.is_some(),
        call_log: CallLog {
            entries: log.entries[calls_before.min(log.len())..].to_vec(),
        },
        snapshots,
        failure,
    })
}
