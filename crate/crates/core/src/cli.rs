//! Command-line front end. `dispatch` is the whole program; the binary only
//! forwards process arguments and the exit status.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::eval::{
    evaluate_predictions, load_golds, load_jsonl_file, load_predictions, load_wikitq_tsv, run_benchmark,
    write_review_queue, BenchOptions, EvalError, EvalReport,
};
use crate::executor::{run_id_for, TraceFile};
use crate::llm::{Gateway, LlmBackend};
use crate::optimizer::{optimize, OptimizerConfig};
use crate::pipeline::{answer_question, write_run_trace, BackendSpec, PipelineConfig};
use crate::plan::{parse_executable_plan, serialize_plan};
use crate::table::{load_table, LoadOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PIPELINE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tabweave", version, about = "Answer questions over tables with mixed SQL and LLM plans")]
pub struct CliConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one question about one table.
    Run(RunArgs),
    /// Answer and score every record of a dataset.
    Bench(BenchArgs),
    /// Apply the rule-based rewrites to an executable plan.
    Optimize(OptimizeArgs),
    /// Score stored predictions against gold answers.
    Eval(EvalArgs),
    /// Summarize a stored run trace.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Pipeline settings (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `scripted:<transcript>` or `live:<model-id>`; overrides the config.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub paragraph: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Write the run trace under this directory.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_optimize: bool,
    /// Trace directory name; derived from the inputs when omitted.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSONL records, or a WikiTQ-style `.tsv` question file.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Machine-readable report (JSON).
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Review queue (JSONL); defaults to `review_queue.jsonl` beside the report.
    #[arg(long)]
    pub review_out: Option<PathBuf>,
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long)]
    pub no_optimize: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Row label used in the report tables.
    #[arg(long, default_value = "tabweave")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Optimized plan destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rewrite counts (JSON).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Name of the table the plan starts from.
    #[arg(long, default_value = "table")]
    pub base_table: String,
    #[arg(long)]
    pub no_dead_steps: bool,
    #[arg(long)]
    pub no_sql_reorder: bool,
    #[arg(long)]
    pub no_sql_merge: bool,
    #[arg(long)]
    pub no_llm_merge: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL lines `{"id", "prediction"}`.
    #[arg(long)]
    pub pred_file: PathBuf,
    /// JSONL lines `{"id", "answer", "question"?}`.
    #[arg(long)]
    pub gold_file: PathBuf,
    /// Normalizes answers when given; plain exact match otherwise.
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long)]
    pub review_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub run_id: String,
    #[arg(long, default_value = "traces")]
    pub trace_dir: PathBuf,
}

/// Failure with the exit status it maps to.
struct Fail(i32, String);

fn usage(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_USAGE, msg.to_string())
}

fn failed(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_PIPELINE, msg.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn dispatch<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match CliConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a, out, err),
        Command::Bench(a) => bench(a, out),
        Command::Optimize(a) => optimize_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Trace(a) => trace_cmd(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Fail(code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

fn load_config(b: &BackendArgs) -> Result<PipelineConfig, Fail> {
    let mut cfg = match &b.config {
        Some(p) => PipelineConfig::load(p).map_err(usage)?,
        None => PipelineConfig::default(),
    };
    if let Some(spec) = &b.backend {
        cfg.backend = Some(spec.clone());
    }
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> Result<(), Fail> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, Fail> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Fail> {
    let mut cfg = load_config(&a.backend)?;
    if a.no_optimize {
        cfg.optimize = false;
    }
    let gateway = cfg.gateway().map_err(usage)?;
    let name = a.table.file_stem().and_then(|s| s.to_str()).unwrap_or("table").to_string();
    let f = std::fs::File::open(&a.table).map_err(|e| usage(format!("{}: {e}", a.table.display())))?;
    let table = load_table(f, &LoadOptions::named(name)).map_err(usage)?;
    let result = answer_question(&table, &a.question, a.paragraph.as_deref(), &gateway, &cfg);
    if let Some(root) = &a.trace_dir {
        let run_id = a.run_id.clone().unwrap_or_else(|| {
            let table_text = std::fs::read_to_string(&a.table).unwrap_or_default();
            run_id_for(&[&table_text, &a.question, a.paragraph.as_deref().unwrap_or("")])
        });
        let dir = write_run_trace(root, &run_id, &a.question, &result).map_err(|e| failed(format!("writing trace: {e}")))?;
        let _ = writeln!(err, "trace: {}", dir.display());
    }
    match result {
        Ok(r) => {
            let _ = writeln!(out, "{}", r.answer);
            Ok(())
        }
        Err(f) => Err(failed(f)),
    }
}

fn backend_factory(cfg: &PipelineConfig) -> Result<impl Fn(&crate::eval::EvalRecord) -> Result<Arc<dyn LlmBackend>, String> + Sync, Fail> {
    let spec = cfg.backend_spec().map_err(usage)?;
    let base_url = cfg.base_url.clone();
    // A live backend is shared; a scripted directory holds one transcript per record id.
    let shared: Option<Arc<dyn LlmBackend>> = match &spec {
        BackendSpec::Scripted(p) if p.is_dir() => None,
        _ => Some(spec.build(base_url.as_deref()).map_err(usage)?),
    };
    Ok(move |rec: &crate::eval::EvalRecord| match (&shared, &spec) {
        (Some(b), _) => Ok(b.clone()),
        (None, BackendSpec::Scripted(dir)) => BackendSpec::Scripted(dir.join(format!("{}.json", rec.id)))
            .build(None)
            .map_err(|e| e.to_string()),
        (None, BackendSpec::Live(_)) => unreachable!("live backends are always shared"),
    })
}

fn emit_report(
    report: &EvalReport,
    label: &str,
    report_out: Option<&Path>,
    review_out: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), Fail> {
    let _ = out.write_all(report.render_text(label).as_bytes());
    if let Some(p) = report_out {
        let json = serde_json::to_string_pretty(report).map_err(failed)?;
        write_file(p, &(json + "\n"))?;
    }
    let review = review_out.or_else(|| report_out.map(|p| p.with_file_name("review_queue.jsonl")));
    if let Some(p) = review {
        write_review_queue(&p, &report.review_items()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn eval_error(e: EvalError) -> Fail {
    match e {
        EvalError::DatasetMalformed { .. } | EvalError::EmptyDataset | EvalError::Io(_) => usage(e),
        EvalError::Backend { .. } => failed(e),
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<(), Fail> {
    let mut cfg = load_config(&a.backend)?;
    if a.no_optimize {
        cfg.optimize = false;
    }
    if let Some(w) = a.workers {
        cfg.workers = w.max(1);
    }
    let records = if a.dataset.extension().is_some_and(|e| e == "tsv") {
        let f = std::fs::File::open(&a.dataset).map_err(|e| usage(format!("{}: {e}", a.dataset.display())))?;
        load_wikitq_tsv(std::io::BufReader::new(f)).map_err(eval_error)?
    } else {
        load_jsonl_file(&a.dataset).map_err(eval_error)?
    };
    let factory = backend_factory(&cfg)?;
    let opts = BenchOptions {
        base_dir: a.dataset.parent().map(Path::to_path_buf).unwrap_or_default(),
        trace_dir: a.trace_dir.clone(),
        config: cfg,
    };
    let report = run_benchmark(&records, &opts, factory).map_err(eval_error)?;
    emit_report(&report, &a.label, a.report_out.as_deref(), a.review_out, out)
}

fn optimize_cmd(a: OptimizeArgs, out: &mut dyn Write) -> Result<(), Fail> {
    let text = read_file(&a.plan)?;
    let plan = parse_executable_plan(&text, &a.base_table).map_err(usage)?;
    let cfg = OptimizerConfig {
        dead_steps: !a.no_dead_steps,
        sql_reorder: !a.no_sql_reorder,
        sql_merge: !a.no_sql_merge,
        llm_merge: !a.no_llm_merge,
    };
    let (optimized, stats) = optimize(&plan, &cfg);
    let rendered = serialize_plan(&optimized);
    match &a.out {
        Some(p) => write_file(p, &rendered)?,
        None => {
            let _ = out.write_all(rendered.as_bytes());
        }
    }
    if let Some(p) = &a.stats {
        let json = serde_json::to_string_pretty(&stats).map_err(failed)?;
        write_file(p, &(json + "\n"))?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<(), Fail> {
    let preds = load_predictions(&a.pred_file).map_err(eval_error)?;
    let golds = load_golds(&a.gold_file).map_err(eval_error)?;
    let cfg = load_config(&a.backend)?;
    let gateway: Option<Gateway> = match cfg.backend {
        Some(_) => Some(cfg.gateway().map_err(usage)?),
        None => None,
    };
    let report = evaluate_predictions(&preds, &golds, gateway.as_ref()).map_err(eval_error)?;
    let _ = writeln!(
        out,
        "records: {}\nEM accuracy: {:.1}%\nREM accuracy: {:.1}%\nmatch / mismatch / needs review: {} / {} / {}",
        report.records,
        report.em_accuracy * 100.0,
        report.rem_accuracy * 100.0,
        report.matches,
        report.mismatches,
        report.needs_review
    );
    if let Some(p) = &a.report_out {
        let json = serde_json::to_string_pretty(&report).map_err(failed)?;
        write_file(p, &(json + "\n"))?;
    }
    let review = a.review_out.or_else(|| a.report_out.as_ref().map(|p| p.with_file_name("review_queue.jsonl")));
    if let Some(p) = review {
        write_review_queue(&p, &report.review_items()).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn trace_cmd(a: TraceArgs, out: &mut dyn Write) -> Result<(), Fail> {
    let dir = a.trace_dir.join(&a.run_id);
    let t = TraceFile::load(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut s = format!("run: {}\nquestion: {}\n", t.run_id, t.question);
    match (&t.answer, &t.error) {
        (Some(ans), _) => s.push_str(&format!("answer: {ans}\n")),
        (None, Some(e)) => s.push_str(&format!("error: {e}\n")),
        (None, None) => {}
    }
    s.push_str(&format!(
        "tables: {} -> {}{}\n",
        t.base_table,
        t.final_table,
        if t.fallback_used { " (fallback)" } else { "" }
    ));
    s.push_str(&format!("steps: {}\n", t.steps.len()));
    for st in &t.steps {
        let detail = match (&st.rows, &st.error) {
            (_, Some(e)) => format!(" error: {e}"),
            (Some(n), None) => format!(" rows={n}"),
            _ => String::new(),
        };
        s.push_str(&format!(
            "  {} {} {} -> {} {}{}\n",
            st.index,
            st.kind.as_str(),
            st.input_table,
            st.output_table,
            serde_json::to_value(st.status).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            detail
        ));
    }
    s.push_str(&format!("calls: {}\n", t.call_log.len()));
    let mut seen: Vec<(String, usize)> = Vec::new();
    for e in &t.call_log.entries {
        let id = e.template_id.as_str().to_string();
        match seen.iter_mut().find(|(k, _)| *k == id) {
            Some((_, n)) => *n += 1,
            None => seen.push((id, 1)),
        }
    }
    for (id, n) in seen {
        s.push_str(&format!("  {id}: {n}\n"));
    }
    let _ = out.write_all(s.as_bytes());
    Ok(())
}
