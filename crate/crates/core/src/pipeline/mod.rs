//! End-to-end question answering over one table.

mod config;
mod stages;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{BackendSpec, ConfigError, PipelineConfig};
pub use stages::{
    blocking_issues, clean_answer, describe_columns, extract_answer, filter_paragraph, generate_executable,
    generate_plan, parse_column_description, parse_name_list, select_relevant_columns, verify_plan, Codegen,
    ColumnMeta, PromptInputs, NOT_PRESENT,
};

use crate::executor::{execute_plan, write_trace, ExecError, ExecOptions, ExecutionTrace, TraceFile};
use crate::llm::{CallLog, Gateway, LlmError};
use crate::optimizer::{llm_optimize, optimize, OptimizationStats, OptimizerConfig};
use crate::plan::{serialize_draft_plan, serialize_plan, DraftStep, Issue, Plan, SchemaRegistry};
use crate::table::{sanitize_schema, Table};

/// Everything the stages learn about the input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QaContext {
    /// Sanitized and projected to the relevant columns.
    pub table: Table,
    pub question: String,
    pub paragraph: Option<String>,
    pub relevant_columns: Vec<String>,
    pub table_description: String,
    pub column_meta: Vec<ColumnMeta>,
    pub filtered_context: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RelevantColumns,
    DescribeColumns,
    FilterParagraph,
    Plan,
    Verify,
    Codegen,
    Optimize,
    Execute,
    Answer,
}

/// Stage that failed but was worked around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    /// No draft plan; codegen ran from the question alone.
    PlanGenerationFailed,
    /// No executable plan; the answer comes from the base table.
    CodegenFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaResult {
    pub answer: String,
    pub context: QaContext,
    /// Raw column description reply, as passed to later prompts.
    pub description_text: String,
    pub plan_draft: Vec<DraftStep>,
    pub plan_verified: Vec<DraftStep>,
    /// Codegen output before optimization.
    pub plan_executable: Plan,
    pub plan_executable_text: String,
    /// Set when optimization ran.
    pub plan_optimized: Option<Plan>,
    pub validation_issues: Vec<Issue>,
    pub stats: OptimizationStats,
    pub trace: ExecutionTrace,
    /// Every call made for this question.
    pub call_log: CallLog,
    pub degraded: Option<Degradation>,
}

impl QaResult {
    /// The plan that was executed.
    pub fn executed_plan(&self) -> &Plan {
        self.plan_optimized.as_ref().unwrap_or(&self.plan_executable)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("backend failure: {0}")]
    Backend(#[from] LlmError),
    #[error("neither a plan nor executable code could be generated")]
    PipelineFailed,
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// A run that could not produce an answer, with whatever it produced.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct PipelineFailure {
    pub stage: Stage,
    pub error: PipelineError,
    pub call_log: CallLog,
    pub context: Option<QaContext>,
    pub plan: Option<Plan>,
    pub trace: Option<ExecutionTrace>,
}

struct Run<'a> {
    gateway: &'a Gateway,
    calls_before: usize,
    context: Option<QaContext>,
    plan: Option<Plan>,
}

impl Run<'_> {
    fn calls(&self) -> CallLog {
        let log = self.gateway.call_log();
        CallLog {
            entries: log.entries[self.calls_before.min(log.len())..].to_vec(),
        }
    }

    fn fail(&self, stage: Stage, error: impl Into<PipelineError>, trace: Option<ExecutionTrace>) -> PipelineFailure {
        PipelineFailure {
            stage,
            error: error.into(),
            call_log: self.calls(),
            context: self.context.clone(),
            plan: self.plan.clone(),
            trace,
        }
    }
}

/// Runs every stage in order. Stage failures degrade where possible; only
/// backend failures and a run with neither plan nor code are errors.
#[allow(clippy::result_large_err)] // failures carry the partial run state
pub fn answer_question(
    table: &Table,
    question: &str,
    paragraph: Option<&str>,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> Result<QaResult, PipelineFailure> {
    let mut run = Run {
        gateway,
        calls_before: gateway.call_log().len(),
        context: None,
        plan: None,
    };
    let rows = config.prompt_row_limit.max(1);
    let (clean, _) = sanitize_schema(table);

    let relevant = select_relevant_columns(&clean, question, gateway, rows)
        .map_err(|e| run.fail(Stage::RelevantColumns, e, None))?;
    let names: Vec<&str> = relevant.iter().map(String::as_str).collect();
    let work = clean.project(&names).unwrap_or_else(|_| clean.clone());

    let mut ctx = QaContext {
        table: work,
        question: question.to_string(),
        paragraph: paragraph.map(str::to_string),
        relevant_columns: relevant.clone(),
        table_description: String::new(),
        column_meta: Vec::new(),
        filtered_context: None,
    };
    run.context = Some(ctx.clone());

    let (description_text, table_description, metas) =
        describe_columns(&ctx.table, question, gateway, rows).map_err(|e| run.fail(Stage::DescribeColumns, e, None))?;
    ctx.table_description = table_description;
    ctx.column_meta = metas;
    run.context = Some(ctx.clone());

    if let Some(p) = paragraph.filter(|p| !p.trim().is_empty()) {
        let filtered = filter_paragraph(p, question, &ctx.table, gateway, rows)
            .map_err(|e| run.fail(Stage::FilterParagraph, e, None))?;
        ctx.filtered_context = Some(filtered).filter(|f| !f.is_empty());
        run.context = Some(ctx.clone());
    }

    let inputs = PromptInputs {
        table: &ctx.table,
        question,
        description: &description_text,
        row_limit: rows,
    };
    let mut degraded = None;
    let draft = match generate_plan(&inputs, gateway).map_err(|e| run.fail(Stage::Plan, e, None))? {
        Ok(d) => d,
        Err(_) => {
            degraded = Some(Degradation::PlanGenerationFailed);
            Vec::new()
        }
    };
    let verified = if draft.is_empty() {
        Vec::new()
    } else {
        verify_plan(&inputs, &draft, gateway).map_err(|e| run.fail(Stage::Verify, e, None))?
    };
    let plan_text = if verified.is_empty() {
        "Write the steps needed to answer the question.".to_string()
    } else {
        serialize_draft_plan(&verified)
    };
    let codegen = generate_executable(&inputs, &plan_text, gateway).map_err(|e| run.fail(Stage::Codegen, e, None))?;
    let (plan, plan_executable_text, issues) = match codegen {
        Some(c) => (c.plan, c.text, c.issues),
        None if degraded.is_some() => return Err(run.fail(Stage::Codegen, PipelineError::PipelineFailed, None)),
        None => {
            degraded = Some(Degradation::CodegenFailed);
            (Plan::new(ctx.table.name(), Vec::new()), String::new(), Vec::new())
        }
    };
    run.plan = Some(plan.clone());

    let mut stats = OptimizationStats {
        steps_before: plan.steps.len(),
        steps_after: plan.steps.len(),
        llm_steps_before: plan.count(crate::plan::StepKind::Llm),
        llm_steps_after: plan.count(crate::plan::StepKind::Llm),
        sql_steps_before: plan.count(crate::plan::StepKind::Sql),
        sql_steps_after: plan.count(crate::plan::StepKind::Sql),
        ..Default::default()
    };
    let mut plan_optimized = None;
    if config.optimize || config.llm_optimize {
        let mut p = plan.clone();
        if config.llm_optimize {
            let schema = SchemaRegistry::new().with_table(&ctx.table);
            p = llm_optimize(&p, gateway, &schema, &description_text);
        }
        if config.optimize {
            let (o, s) = optimize(&p, &OptimizerConfig::default());
            p = o;
            stats = OptimizationStats {
                steps_before: plan.steps.len(),
                llm_steps_before: plan.count(crate::plan::StepKind::Llm),
                sql_steps_before: plan.count(crate::plan::StepKind::Sql),
                ..s
            };
        } else {
            stats.steps_after = p.steps.len();
            stats.llm_steps_after = p.count(crate::plan::StepKind::Llm);
            stats.sql_steps_after = p.count(crate::plan::StepKind::Sql);
        }
        plan_optimized = Some(p);
    }
    let to_run = plan_optimized.as_ref().unwrap_or(&plan);

    let opts = ExecOptions {
        question: question.to_string(),
        context: ctx.filtered_context.clone(),
    };
    let trace = execute_plan(to_run, &ctx.table, gateway, &opts).map_err(|e| run.fail(Stage::Execute, e, None))?;
    if let Some(f) = trace.failure.as_ref().filter(|f| f.is_backend_failure()) {
        let crate::executor::StepError::Llm(e) = f.clone() else {
            unreachable!("backend failures are LLM errors")
        };
        return Err(run.fail(Stage::Execute, e, Some(trace)));
    }

    let answer = extract_answer(trace.final_result(), question, ctx.filtered_context.as_deref(), gateway, rows)
        .map_err(|e| run.fail(Stage::Answer, e, Some(trace.clone())))?;

    Ok(QaResult {
        answer,
        call_log: run.calls(),
        context: ctx,
        description_text,
        plan_draft: draft,
        plan_verified: verified,
        plan_executable: plan,
        plan_executable_text,
        plan_optimized,
        validation_issues: issues,
        stats,
        trace,
        degraded,
    })
}

/// Writes a run's trace directory. `result` may be a success or a failure.
pub fn write_run_trace(
    root: &Path,
    run_id: &str,
    question: &str,
    result: &Result<QaResult, PipelineFailure>,
) -> std::io::Result<PathBuf> {
    match result {
        Ok(r) => {
            let file = TraceFile {
                run_id: run_id.to_string(),
                question: question.to_string(),
                base_table: r.plan_executable.base_table.clone(),
                final_table: r.trace.final_table.clone(),
                fallback_used: r.trace.fallback_used,
                steps: r.trace.steps.clone(),
                call_log: r.call_log.clone(),
                optimization: r.plan_optimized.as_ref().map(|_| serde_json::to_value(&r.stats).unwrap_or_default()),
                answer: Some(r.answer.clone()),
                error: None,
            };
            let optimized = r.plan_optimized.as_ref().map(serialize_plan);
            write_trace(root, &file, &serialize_plan(&r.plan_executable), optimized.as_deref(), Some(&r.trace))
        }
        Err(f) => {
            let base = f
                .plan
                .as_ref()
                .map(|p| p.base_table.clone())
                .or_else(|| f.context.as_ref().map(|c| c.table.name().to_string()))
                .unwrap_or_default();
            let file = TraceFile {
                run_id: run_id.to_string(),
                question: question.to_string(),
                final_table: f.trace.as_ref().map(|t| t.final_table.clone()).unwrap_or_else(|| base.clone()),
                base_table: base,
                fallback_used: f.trace.as_ref().is_some_and(|t| t.fallback_used),
                steps: f.trace.as_ref().map(|t| t.steps.clone()).unwrap_or_default(),
                call_log: f.call_log.clone(),
                optimization: None,
                answer: None,
                error: Some(f.to_string()),
            };
            let plan_text = f.plan.as_ref().map(serialize_plan).unwrap_or_default();
            write_trace(root, &file, &plan_text, None, f.trace.as_ref())
        }
    }
}
