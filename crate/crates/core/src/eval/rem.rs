//! Relaxed exact match.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::llm::{Gateway, TemplateId};
use crate::pipeline::{clean_answer, NOT_PRESENT};
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemVerdict {
    Match,
    Mismatch,
    /// Normalization changed the prediction in a way a person must confirm.
    NeedsReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemOutcome {
    pub verdict: RemVerdict,
    pub normalized: String,
    /// Whether the answer-format call was made.
    pub called: bool,
}

/// Lowercased, whitespace-collapsed form used by every comparison.
pub fn canonical_answer(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    canonical_answer(pred) == canonical_answer(gold)
}

fn numbers(s: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").expect("valid regex"));
    let mut v: Vec<String> = re
        .find_iter(s)
        .filter_map(|m| m.as_str().replace(',', "").parse::<f64>().ok())
        .map(|f| f.to_string())
        .collect();
    v.sort();
    v
}

fn is_sentinel(s: &str) -> bool {
    s.trim().is_empty() || canonical_answer(s).trim_end_matches('.') == canonical_answer(NOT_PRESENT).trim_end_matches('.')
}

/// Asks the model to restate `pred` in the gold answer's format. Backend
/// failures and empty replies leave `pred` unchanged.
pub fn normalize_answer(pred: &str, gold: &str, question: &str, table: &Table, gateway: &Gateway) -> String {
    let bindings = HashMap::from([
        ("name", table.name().to_string()),
        ("table", table.render_for_prompt(20)),
        ("question", question.to_string()),
        ("answer", pred.to_string()),
        ("gold", gold.to_string()),
    ]);
    match gateway.complete_template(TemplateId::AnswerFormat, &bindings) {
        Ok(r) => {
            let mut t = clean_answer(&r.text);
            if let Some(rest) = t.strip_prefix("Your Output:") {
                t = rest.trim().to_string();
            }
            if t.is_empty() {
                pred.to_string()
            } else {
                t
            }
        }
        Err(_) => pred.to_string(),
    }
}

/// Exact match first (no call). Otherwise normalize and compare again. A
/// normalization is trusted only if it keeps the prediction's numbers and
/// the prediction was an actual answer; anything else it changed goes to
/// review.
pub fn relaxed_exact_match(pred: &str, gold: &str, question: &str, table: &Table, gateway: &Gateway) -> RemOutcome {
    if exact_match(pred, gold) {
        return RemOutcome {
            verdict: RemVerdict::Match,
            normalized: pred.to_string(),
            called: false,
        };
    }
    let normalized = normalize_answer(pred, gold, question, table, gateway);
    let changed = canonical_answer(&normalized) != canonical_answer(pred);
    let trusted = !is_sentinel(pred) && numbers(pred) == numbers(&normalized);
    let verdict = if exact_match(&normalized, gold) {
        if trusted {
            RemVerdict::Match
        } else {
            RemVerdict::NeedsReview
        }
    } else if changed {
        RemVerdict::NeedsReview
    } else {
        RemVerdict::Mismatch
    };
    RemOutcome {
        verdict,
        normalized,
        called: true,
    }
}

/// One line of the review queue file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub question: String,
    pub prediction: String,
    pub normalized: String,
    pub gold: String,
}

/// Writes one JSON object per line.
pub fn write_review_queue(path: &Path, items: &[ReviewItem]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}
