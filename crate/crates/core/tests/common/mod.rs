//! Shared fixtures: the soccer example, small tables, a rule-driven backend
//! and a generator of random valid plans.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use tabweave::llm::{answer_rows, BackendError, LlmRequest, RuleBackend, TemplateId, Transcript};
use tabweave::plan::{llm_snapshot_name, LlmStep, LlmTarget, Plan, PlanStep, SqlStep};
use tabweave::table::{load_table, Cell, Column, ColumnType, LoadOptions, Table};

pub const SOCCER_QUESTION: &str = "How long did it take for the New York Americans to win the National Cup after 1936?";

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

pub fn soccer_table() -> Table {
    let f = std::fs::File::open(data_path("New_York_Americans_soccer.csv")).unwrap();
    load_table(f, &LoadOptions::named("New_York_Americans_soccer")).unwrap()
}

pub fn soccer_transcript() -> Transcript {
    Transcript::load(&data_path("soccer_transcript.json")).unwrap()
}

/// `t(id, label, v)` with `v = id` and labels cycling through a..c.
pub fn tiny_table(n: usize) -> Table {
    let mut csv = String::from("id,label,v\n");
    for i in 1..=n {
        csv.push_str(&format!("{i},{},{i}\n", ["a", "b", "c"][i % 3]));
    }
    load_table(csv.as_bytes(), &LoadOptions::named("t")).unwrap()
}

pub const SQL_ONLY_PLAN: &str = "SQL_Step -\nCREATE TABLE big AS SELECT * FROM t WHERE v > 2;";
pub const EMPTY_RESULT_PLAN: &str = "SQL_Step -\nCREATE TABLE none_left AS SELECT * FROM t WHERE v > 100;";
pub const ONE_LLM_PLAN: &str = "LLM_Step -\n- Reason: need it\n- Table name: t\n- original column to be used: label\n- LLM prompt: upper case the label\n- New column name: label_up\n\nSQL_Step -\nCREATE TABLE out AS SELECT id, label_up FROM t WHERE v > 0;";

fn passage(text: &str) -> String {
    text.split("Passage: ")
        .nth(1)
        .and_then(|p| p.split("\n\nRelevant sentences:").next())
        .unwrap_or("")
        .trim()
        .to_string()
}

/// Answers every stage by template; `codegen` is the code-execution reply.
/// LLM steps upper-case their inputs. The answer is "widgets" when a
/// passage reached the prompt, else "answer".
pub fn rule_backend(codegen: &str) -> RuleBackend {
    let codegen = codegen.to_string();
    RuleBackend::new("rules", move |req: &LlmRequest| -> Result<String, BackendError> {
        Ok(match req.template_id {
            TemplateId::RelevantColumns => "[]".into(),
            TemplateId::ColumnDescription => "A small table.".into(),
            TemplateId::Planning | TemplateId::VerifyPlan => "Step 1: SQL - filter the rows".into(),
            TemplateId::CodeExecution => codegen.clone(),
            TemplateId::ParagraphFilter => passage(&req.text),
            TemplateId::LlmStep => match &req.payload {
                Some(p) => answer_rows(p, &|_, vals: &[&str]| vals.join("/").to_uppercase()),
                None => String::new(),
            },
            TemplateId::AnswerExtraction => {
                if req.text.contains("Relevant information:") {
                    "widgets".into()
                } else {
                    "answer".into()
                }
            }
            TemplateId::AnswerFormat | TemplateId::PlanOptimization => String::new(),
        })
    })
}

/// Deterministic backend for random plans: upper-cases the joined inputs.
pub fn upper_backend() -> RuleBackend {
    RuleBackend::row_wise("", |_, vals| vals.join("/").to_uppercase())
}

// Random tables and plans -------------------------------------------------

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Int,
    Real,
    Text,
}

pub fn random_table(rng: &mut impl RngCore) -> Table {
    let ncols = rng.random_range(2..=8);
    let nrows = rng.random_range(0..=50);
    let columns = (0..ncols)
        .map(|c| {
            let kind = *[Kind::Int, Kind::Real, Kind::Text].choose(rng).unwrap();
            let values: Vec<Cell> = (0..nrows)
                .map(|_| {
                    if rng.random_ratio(1, 12) {
                        return Cell::Null;
                    }
                    match kind {
                        Kind::Int => Cell::Integer(rng.random_range(0..10)),
                        Kind::Real => Cell::Real(rng.random_range(0..40) as f64 / 4.0),
                        Kind::Text => Cell::Text(["a", "b", "c", "d"].choose(rng).unwrap().to_string()),
                    }
                })
                .collect();
            let ty = match kind {
                Kind::Int => ColumnType::Integer,
                Kind::Real => ColumnType::Real,
                Kind::Text => ColumnType::Text,
            };
            Column::new(format!("c{c}"), ty, values)
        })
        .collect();
    Table::with_row_count("t", columns, nrows).unwrap()
}

#[derive(Clone)]
struct Rel {
    name: String,
    cols: Vec<(String, Kind)>,
}

fn predicate(rng: &mut impl RngCore, cols: &[(String, Kind)]) -> String {
    let (c, k) = cols.choose(rng).unwrap();
    match k {
        Kind::Int => format!("{c} > {}", rng.random_range(0..8)),
        Kind::Real => format!("{c} <= {}", rng.random_range(0..10)),
        Kind::Text => format!("{c} <> '{}'", ["a", "b", "c", "A", "B/C"].choose(rng).unwrap()),
    }
}

fn all_columns(cols: &[(String, Kind)]) -> String {
    cols.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(", ")
}

/// A random plan over `table` (named `t`) that executes cleanly. Chains of
/// filters, sorts, projections, aggregates, LLM steps, unused outputs and
/// snapshot reads give every optimizer pass something to do.
pub fn random_plan(rng: &mut impl RngCore, table: &Table) -> Plan {
    let base_cols: Vec<(String, Kind)> = table
        .columns()
        .iter()
        .map(|c| {
            let k = match c.declared_type {
                ColumnType::Integer => Kind::Int,
                ColumnType::Real => Kind::Real,
                _ => Kind::Text,
            };
            (c.name.clone(), k)
        })
        .collect();
    let mut rels = vec![Rel {
        name: "t".into(),
        cols: base_cols,
    }];
    let mut steps: Vec<PlanStep> = Vec::new();
    let n = rng.random_range(1..=6);
    let mut fresh = 0;
    for i in 0..n {
        let index = steps.len() + 1;
        let last = i + 1 == n;
        // Mostly build on the newest relation.
        let src = if rng.random_ratio(3, 4) {
            rels.last().unwrap().clone()
        } else {
            rels.choose(rng).unwrap().clone()
        };
        fresh += 1;
        let out = format!("r{fresh}");
        let choice = rng.random_range(0..9);
        let (sql, cols): (String, Vec<(String, Kind)>) = match choice {
            0 | 1 => (
                format!("CREATE TABLE {out} AS SELECT * FROM {} WHERE {};", src.name, predicate(rng, &src.cols)),
                src.cols.clone(),
            ),
            2 => {
                let (c, _) = src.cols.choose(rng).unwrap();
                let dir = if rng.random_bool(0.5) { " DESC" } else { "" };
                (
                    format!("CREATE TABLE {out} AS SELECT * FROM {} ORDER BY {c}{dir};", src.name),
                    src.cols.clone(),
                )
            }
            3 => {
                let k = rng.random_range(1..=src.cols.len());
                let picked: Vec<(String, Kind)> = src.cols.choose_multiple(rng, k).cloned().collect();
                (
                    format!("CREATE TABLE {out} AS SELECT {} FROM {};", all_columns(&picked), src.name),
                    picked,
                )
            }
            4 => {
                let g = src.cols.choose(rng).unwrap().clone();
                (
                    format!(
                        "CREATE TABLE {out} AS SELECT {0}, COUNT(*) AS n{fresh} FROM {1} GROUP BY {0};",
                        g.0, src.name
                    ),
                    vec![g, (format!("n{fresh}"), Kind::Int)],
                )
            }
            5 => (
                format!(
                    "CREATE TABLE {out} AS SELECT * FROM {} ORDER BY {} LIMIT {};",
                    src.name,
                    all_columns(&src.cols),
                    rng.random_range(1..6)
                ),
                src.cols.clone(),
            ),
            _ => {
                // LLM step, in place on `src`.
                let (input, _) = src.cols.choose(rng).unwrap().clone();
                let new = format!("u{fresh}");
                steps.push(PlanStep::Llm(LlmStep {
                    reason: if rng.random_bool(0.5) { format!("derive {new}") } else { String::new() },
                    source_table: src.name.clone(),
                    targets: vec![LlmTarget {
                        input_columns: vec![input],
                        prompt: format!("upper case for {new}"),
                        new_column: new.clone(),
                    }],
                }));
                let mut cols = src.cols.clone();
                cols.push((new, Kind::Text));
                for r in rels.iter_mut().filter(|r| r.name == src.name) {
                    r.cols = cols.clone();
                }
                if rng.random_ratio(1, 3) {
                    // Read the snapshot instead of the live table.
                    rels.push(Rel {
                        name: llm_snapshot_name(&src.name, index),
                        cols,
                    });
                } else if let Some(pos) = rels.iter().position(|r| r.name == src.name) {
                    let r = rels.remove(pos);
                    rels.push(r);
                }
                continue;
            }
        };
        let sql = if last && rng.random_bool(0.3) {
            // Bare final SELECT.
            let s = sql.split_once(" AS ").unwrap().1.to_string();
            steps.push(PlanStep::Sql(SqlStep {
                sql_text: s,
                output_table: format!("step{index}_result"),
            }));
            continue;
        } else {
            sql
        };
        steps.push(PlanStep::Sql(SqlStep {
            sql_text: sql,
            output_table: out.clone(),
        }));
        rels.push(Rel { name: out, cols });
    }
    Plan::new("t", steps)
}
