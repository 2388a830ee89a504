//! Benchmark runs, answer scoring and report tables.

mod dataset;
mod rem;
mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{load_jsonl, load_jsonl_file, load_wikitq_tsv, EvalRecord, InlineTable, TableRef};
pub use rem::{
    canonical_answer, exact_match, normalize_answer, relaxed_exact_match, write_review_queue, RemOutcome,
    RemVerdict, ReviewItem,
};
pub use report::{api_calls_table, error_table, optimization_table, step_table, token_table};

use crate::executor::{StepError, StepStatus};
use crate::llm::{BackendError, Gateway, LlmBackend, RuleBackend};
use crate::optimizer::OptimizationStats;
use crate::pipeline::{answer_question, write_run_trace, PipelineConfig, PipelineError, PipelineFailure, QaResult};
use crate::plan::{IssueKind, StepKind};
use crate::table::Table;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dataset record {id} is malformed: {reason}")]
    DatasetMalformed { id: String, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("cannot set up backend for {id}: {reason}")]
    Backend { id: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    SqlError,
    PlanError,
    None,
}

/// SQL errors are engine failures of SQL steps; plan errors are failed
/// plan generation or codegen, or steps that used tables or columns that
/// do not exist.
pub fn classify_error(result: &QaResult) -> ErrorClass {
    if result.degraded.is_some() {
        return ErrorClass::PlanError;
    }
    let hallucinated: Vec<usize> = result
        .validation_issues
        .iter()
        .filter(|i| matches!(i.kind, IssueKind::UnknownTable | IssueKind::UnknownColumn))
        .map(|i| i.step)
        .collect();
    let failed_sql = result
        .trace
        .steps
        .iter()
        .find(|s| s.status == StepStatus::Failed && s.kind == StepKind::Sql);
    match failed_sql {
        Some(s) if hallucinated.contains(&s.index) => ErrorClass::PlanError,
        Some(_) => ErrorClass::SqlError,
        None if !hallucinated.is_empty() => ErrorClass::PlanError,
        None => match &result.trace.failure {
            Some(StepError::UnknownTable(_) | StepError::UnknownColumn(_)) => ErrorClass::PlanError,
            _ => ErrorClass::None,
        },
    }
}

/// Runs that produced no answer: only plan and code failures are errors of
/// the method; backend outages are not.
pub fn classify_failure(failure: &PipelineFailure) -> ErrorClass {
    match failure.error {
        PipelineError::PipelineFailed => ErrorClass::PlanError,
        _ => ErrorClass::None,
    }
}

/// Everything recorded about one benchmark question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub question: String,
    pub gold: String,
    pub prediction: String,
    pub normalized: String,
    pub em: bool,
    pub verdict: RemVerdict,
    /// Pipeline calls, answer-format calls excluded.
    pub calls: usize,
    /// Answer-format calls.
    pub eval_calls: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Steps in the generated (pre-optimization) plan.
    pub llm_steps: usize,
    pub sql_steps: usize,
    pub stats: OptimizationStats,
    pub error_class: ErrorClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub sql_error: f64,
    pub plan_error: f64,
    pub none: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub em_accuracy: f64,
    pub rem_accuracy: f64,
    pub matches: usize,
    pub mismatches: usize,
    pub needs_review: usize,
    pub avg_calls_per_query: f64,
    pub avg_eval_calls_per_query: f64,
    pub avg_input_tokens: f64,
    pub avg_output_tokens: f64,
    pub llm_steps: usize,
    pub sql_steps: usize,
    pub optimized: bool,
    pub optimization_stats: OptimizationStats,
    pub error_breakdown: ErrorBreakdown,
    pub outcomes: Vec<RecordOutcome>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: Vec<RecordOutcome>, optimized: bool) -> EvalReport {
        let n = outcomes.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let avg = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };
        let count = |v: RemVerdict| outcomes.iter().filter(|o| o.verdict == v).count();
        let class = |c: ErrorClass| outcomes.iter().filter(|o| o.error_class == c).count();
        let mut stats = OptimizationStats::default();
        for o in &outcomes {
            stats.add(&o.stats);
        }
        EvalReport {
            records: n,
            em_accuracy: frac(outcomes.iter().filter(|o| o.em).count()),
            rem_accuracy: frac(count(RemVerdict::Match)),
            matches: count(RemVerdict::Match),
            mismatches: count(RemVerdict::Mismatch),
            needs_review: count(RemVerdict::NeedsReview),
            avg_calls_per_query: avg(outcomes.iter().map(|o| o.calls as f64).sum()),
            avg_eval_calls_per_query: avg(outcomes.iter().map(|o| o.eval_calls as f64).sum()),
            avg_input_tokens: avg(outcomes.iter().map(|o| o.input_tokens as f64).sum()),
            avg_output_tokens: avg(outcomes.iter().map(|o| o.output_tokens as f64).sum()),
            llm_steps: outcomes.iter().map(|o| o.llm_steps).sum(),
            sql_steps: outcomes.iter().map(|o| o.sql_steps).sum(),
            optimized,
            optimization_stats: stats,
            error_breakdown: ErrorBreakdown {
                sql_error: frac(class(ErrorClass::SqlError)),
                plan_error: frac(class(ErrorClass::PlanError)),
                none: frac(class(ErrorClass::None)),
            },
            outcomes,
        }
    }

    pub fn review_items(&self) -> Vec<ReviewItem> {
        self.outcomes
            .iter()
            .filter(|o| o.verdict == RemVerdict::NeedsReview)
            .map(|o| ReviewItem {
                id: o.id.clone(),
                question: o.question.clone(),
                prediction: o.prediction.clone(),
                normalized: o.normalized.clone(),
                gold: o.gold.clone(),
            })
            .collect()
    }

    /// Human-readable report: summary plus the optimization, API call,
    /// error and step-count tables.
    pub fn render_text(&self, label: &str) -> String {
        let acc = Some(self.rem_accuracy * 100.0);
        let (before, after) = if self.optimized { (None, acc) } else { (acc, None) };
        let mut s = format!(
            "records: {}\nEM accuracy: {:.1}%\nREM accuracy: {:.1}%\nmatch / mismatch / needs review: {} / {} / {}\nanswer-format calls per query: {:.2}\n\n",
            self.records,
            self.em_accuracy * 100.0,
            self.rem_accuracy * 100.0,
            self.matches,
            self.mismatches,
            self.needs_review,
            self.avg_eval_calls_per_query,
        );
        for table in [
            optimization_table(&self.optimization_stats, before, after),
            api_calls_table(label, self.avg_calls_per_query),
            error_table(label, &self.error_breakdown),
            step_table(label, self.llm_steps, self.sql_steps),
            token_table(label, self.avg_input_tokens, self.avg_output_tokens),
        ] {
            s.push_str(&table);
            s.push('\n');
        }
        s
    }
}

/// Inputs shared by every record of a run.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub config: PipelineConfig,
    /// Relative table paths resolve against this directory.
    pub base_dir: PathBuf,
    /// Per-record traces go to `<trace_dir>/<id>/` when set.
    pub trace_dir: Option<PathBuf>,
}

fn unavailable() -> Arc<dyn LlmBackend> {
    Arc::new(RuleBackend::new("none", |_| {
        Err(BackendError::BackendUnavailable("no backend configured".into()))
    }))
}

/// Directory-safe form of a record id.
fn run_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Scores one prediction. Empty predictions are mismatches without a call.
pub fn score(
    id: &str,
    question: &str,
    prediction: &str,
    gold: &str,
    table: &Table,
    eval_gateway: &Gateway,
) -> (bool, RemOutcome) {
    let em = exact_match(prediction, gold);
    let rem = if prediction.trim().is_empty() {
        RemOutcome {
            verdict: RemVerdict::Mismatch,
            normalized: String::new(),
            called: false,
        }
    } else {
        relaxed_exact_match(prediction, gold, question, table, eval_gateway)
    };
    let _ = id;
    (em, rem)
}

fn run_record(
    rec: &EvalRecord,
    opts: &BenchOptions,
    backend: Arc<dyn LlmBackend>,
) -> Result<RecordOutcome, EvalError> {
    let table = rec.load_table(&opts.base_dir)?;
    let cfg = &opts.config;
    let gateway = Gateway::new(backend.clone(), cfg.gateway_config());
    let eval_gateway = Gateway::new(backend, cfg.gateway_config());
    let result = answer_question(&table, &rec.question, rec.paragraph.as_deref(), &gateway, cfg);
    let trace_dir = match &opts.trace_dir {
        Some(root) if cfg.retain_trace => Some(
            write_run_trace(root, &run_id(&rec.id), &rec.question, &result)
                .map_err(|e| EvalError::Io(e.to_string()))?
                .display()
                .to_string(),
        ),
        _ => None,
    };
    let (prediction, error_class, llm_steps, sql_steps, stats, failure) = match &result {
        Ok(r) => (
            r.answer.clone(),
            classify_error(r),
            r.plan_executable.count(StepKind::Llm),
            r.plan_executable.count(StepKind::Sql),
            r.stats.clone(),
            None,
        ),
        Err(f) => (
            String::new(),
            classify_failure(f),
            f.plan.as_ref().map_or(0, |p| p.count(StepKind::Llm)),
            f.plan.as_ref().map_or(0, |p| p.count(StepKind::Sql)),
            OptimizationStats::default(),
            Some(f.to_string()),
        ),
    };
    let (em, rem) = score(&rec.id, &rec.question, &prediction, &rec.answer, &table, &eval_gateway);
    let log = gateway.call_log();
    let usage = log.total_usage();
    Ok(RecordOutcome {
        id: rec.id.clone(),
        question: rec.question.clone(),
        gold: rec.answer.clone(),
        prediction,
        normalized: rem.normalized,
        em,
        verdict: rem.verdict,
        calls: log.len(),
        eval_calls: eval_gateway.call_log().len(),
        input_tokens: usage.input,
        output_tokens: usage.output,
        llm_steps,
        sql_steps,
        stats,
        error_class,
        trace_dir,
        failure,
    })
}

/// Answers and scores every record, `config.workers` at a time. Results
/// keep dataset order whatever the completion order.
pub fn run_benchmark<F>(records: &[EvalRecord], opts: &BenchOptions, backend_for: F) -> Result<EvalReport, EvalError>
where
    F: Fn(&EvalRecord) -> Result<Arc<dyn LlmBackend>, String> + Sync,
{
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let slots: Mutex<Vec<Option<Result<RecordOutcome, EvalError>>>> = Mutex::new(vec![None; records.len()]);
    let next = AtomicUsize::new(0);
    let workers = opts.config.workers.clamp(1, records.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(rec) = records.get(i) else { break };
                let out = backend_for(rec)
                    .map_err(|reason| EvalError::Backend {
                        id: rec.id.clone(),
                        reason,
                    })
                    .and_then(|b| run_record(rec, opts, b));
                slots.lock().expect("result slots poisoned")[i] = Some(out);
            });
        }
    });
    let outcomes = slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|o| o.expect("every record visited"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_outcomes(outcomes, opts.config.optimize))
}

/// A gold answer for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub id: String,
    pub answer: String,
    #[serde(default)]
    pub question: String,
}

/// A prediction for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    #[serde(alias = "answer")]
    pub prediction: String,
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::DatasetMalformed {
                id: format!("{}:{}", path.display(), n + 1),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    read_lines(path)
}

pub fn load_golds(path: &Path) -> Result<Vec<GoldAnswer>, EvalError> {
    read_lines(path)
}

/// Scores stored predictions against gold answers. Without a gateway no
/// normalization happens. A gold id with no prediction scores as empty.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    golds: &[GoldAnswer],
    eval_gateway: Option<&Gateway>,
) -> Result<EvalReport, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let fallback = Gateway::new(unavailable(), Default::default());
    let gw = eval_gateway.unwrap_or(&fallback);
    let empty = Table::new("answers", Vec::new()).expect("empty table");
    let mut outcomes = Vec::with_capacity(golds.len());
    for g in golds {
        if g.answer.trim().is_empty() {
            return Err(EvalError::DatasetMalformed {
                id: g.id.clone(),
                reason: "empty gold answer".into(),
            });
        }
        let pred = predictions
            .iter()
            .find(|p| p.id == g.id)
            .map(|p| p.prediction.clone())
            .unwrap_or_default();
        let before = gw.call_log().len();
        let (em, rem) = score(&g.id, &g.question, &pred, &g.answer, &empty, gw);
        let eval_calls = if eval_gateway.is_some() { gw.call_log().len() - before } else { 0 };
        outcomes.push(RecordOutcome {
            id: g.id.clone(),
            question: g.question.clone(),
            gold: g.answer.clone(),
            prediction: pred,
            normalized: rem.normalized,
            em,
            verdict: rem.verdict,
            calls: 0,
            eval_calls,
            input_tokens: 0,
            output_tokens: 0,
            llm_steps: 0,
            sql_steps: 0,
            stats: OptimizationStats::default(),
            error_class: ErrorClass::None,
            trace_dir: None,
            failure: None,
        });
    }
    Ok(EvalReport::from_outcomes(outcomes, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(v: RemVerdict, em: bool) -> RecordOutcome {
        RecordOutcome {
            id: "x".into(),
            question: String::new(),
            gold: "g".into(),
            prediction: "p".into(),
            normalized: "p".into(),
            em,
            verdict: v,
            calls: 6,
            eval_calls: 1,
            input_tokens: 0,
            output_tokens: 0,
            llm_steps: 1,
            sql_steps: 2,
            stats: OptimizationStats::default(),
            error_class: ErrorClass::None,
            trace_dir: None,
            failure: None,
        }
    }

    #[test]
    fn report_arithmetic() {
        let mut v: Vec<RecordOutcome> = (0..7).map(|i| outcome(RemVerdict::Match, i < 5)).collect();
        v.push(outcome(RemVerdict::Mismatch, false));
        v.push(outcome(RemVerdict::Mismatch, false));
        v.push(outcome(RemVerdict::NeedsReview, false));
        let r = EvalReport::from_outcomes(v, true);
        assert_eq!(r.rem_accuracy, 0.7);
        assert_eq!(r.em_accuracy, 0.5);
        assert_eq!(r.needs_review, 1);
        assert_eq!(r.matches + r.mismatches + r.needs_review, r.records);
        assert_eq!(r.avg_calls_per_query, 6.0);
        assert_eq!((r.llm_steps, r.sql_steps), (10, 20));
        assert_eq!(r.review_items().len(), 1);
    }

    #[test]
    fn predictions_without_normalizer() {
        let preds = vec![
            Prediction {
                id: "a".into(),
                prediction: "Italy".into(),
            },
            Prediction {
                id: "b".into(),
                prediction: "17".into(),
            },
        ];
        let golds = vec![
            GoldAnswer {
                id: "a".into(),
                answer: "italy".into(),
                question: String::new(),
            },
            GoldAnswer {
                id: "b".into(),
                answer: "17 years".into(),
                question: String::new(),
            },
            GoldAnswer {
                id: "c".into(),
                answer: "x".into(),
                question: String::new(),
            },
        ];
        let r = evaluate_predictions(&preds, &golds, None).unwrap();
        assert_eq!((r.matches, r.mismatches, r.needs_review), (1, 2, 0));
    }
}
