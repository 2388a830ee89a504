use std::sync::OnceLock;

use regex::Regex;

use super::{DraftStep, PlanError, StepKind};

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bstep[\s_]*(\d+)\s*[:\-.–)]?\s*([A-Za-z]+)\b[ \t]*(?:[-–—:]+[ \t]*)?(.*)$")
            .expect("valid regex")
    })
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#+\s*").expect("valid regex"))
}

/// `Optimized Plan:`, `Revised Plan:` and the like on a line of their own.
fn restart_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^(?:[A-Za-z]+\s+){1,2}plan\s*:?$").expect("valid regex"))
}

fn fallback_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(SQL|LLM)\s*[-–—:]\s*(.*)$").expect("valid regex"))
}

enum LineKind {
    Step(StepKind, String),
    Unknown,
    Text,
}

fn classify(line: &str) -> LineKind {
    let Some(cap) = step_re().captures(line) else {
        if let Some(c) = fallback_re().captures(line.trim()) {
            let kind = if &c[1] == "SQL" { StepKind::Sql } else { StepKind::Llm };
            return LineKind::Step(kind, c[2].trim().to_string());
        }
        return LineKind::Text;
    };
    let word = &cap[2];
    let whole = cap.get(0).expect("group 0");
    let after_word = &line[cap.get(2).expect("group 2").end()..whole.end()];
    let separated = after_word.trim().is_empty() || after_word.trim_start().starts_with(['-', '–', '—', ':']);
    let upper = word.chars().all(|c| c.is_ascii_uppercase());
    if !(separated || upper) {
        return LineKind::Text;
    }
    let kind = match word.to_ascii_uppercase().as_str() {
        "SQL" => StepKind::Sql,
        "LLM" => StepKind::Llm,
        _ if upper && separated && word.len() <= 5 => return LineKind::Unknown,
        _ => return LineKind::Text,
    };
    LineKind::Step(kind, cap[3].trim().to_string())
}

/// Extracts `Step <n>: SQL|LLM - description` lines from model output.
/// Surrounding prose, markdown and code fences are ignored; wrapped
/// descriptions are joined; indices are renumbered from 1. When a reply
/// shows a plan and then a headed replacement (`Optimized Plan:`), the
/// replacement wins.
pub fn parse_draft_plan(text: &str) -> Result<Vec<DraftStep>, PlanError> {
    let mut steps: Vec<DraftStep> = Vec::new();
    for raw in text.lines() {
        let line = heading_re().replace_all(&raw.replace("**", ""), "").into_owned();
        let trimmed = line.trim();
        if trimmed.starts_with("```") {
            continue;
        }
        if !steps.is_empty() && restart_re().is_match(trimmed) {
            steps.clear();
            continue;
        }
        match classify(&line) {
            LineKind::Step(kind, description) => steps.push(DraftStep {
                index: steps.len() + 1,
                kind,
                description,
            }),
            LineKind::Unknown => return Err(PlanError::UnknownStepKind(trimmed.to_string())),
            LineKind::Text => {
                if let Some(last) = steps.last_mut() {
                    if !trimmed.is_empty() {
                        if !last.description.is_empty() {
                            last.description.push(' ');
                        }
                        last.description.push_str(trimmed);
                    }
                }
            }
        }
    }
    if steps.is_empty() {
        return Err(PlanError::NoStepsFound);
    }
    Ok(steps)
}

pub fn serialize_draft_plan(steps: &[DraftStep]) -> String {
    steps
        .iter()
        .map(|s| format!("Step {}: {} - {}", s.index, s.kind.as_str(), s.description))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLANNING_RESPONSE: &str = "Plan: Step 1: SQL - Standardize the Year column to a consistent format and extract
the year from entries like \"Spring 1932\" and \"Fall 1932\".
Step 2: SQL - Clean and standardize the National_Cup column to identify the years
when the team won the national cup.
Step 3: SQL - Filter the data to find the first year after 1936 when the
National_Cup column indicates a win.";

    const VERIFY_RESPONSE: &str = "New Plan: ### Revised Plan:
Step 1: LLM - Standardize the Year column to a consistent format by extracting the
year from entries like \"Spring 1932\" and \"Fall 1932\".
Step 2: SQL - Clean and standardize the National_Cup column to identify winning
entries.
Step 3: SQL - Filter the data to find the first year after 1936.";

    fn kinds(s: &[DraftStep]) -> Vec<StepKind> {
        s.iter().map(|d| d.kind).collect()
    }

    #[test]
    fn planning_response_has_three_sql_steps() {
        let s = parse_draft_plan(PLANNING_RESPONSE).unwrap();
        assert_eq!(kinds(&s), vec![StepKind::Sql; 3]);
        assert!(s[0].description.starts_with("Standardize the Year column"));
        assert!(s[0].description.ends_with("\"Fall 1932\"."));
    }

    #[test]
    fn verified_plan_starts_with_llm() {
        let s = parse_draft_plan(VERIFY_RESPONSE).unwrap();
        assert_eq!(kinds(&s), vec![StepKind::Llm, StepKind::Sql, StepKind::Sql]);
        assert_eq!(s.iter().map(|d| d.index).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn errors() {
        assert_eq!(parse_draft_plan("no plan here"), Err(PlanError::NoStepsFound));
        assert!(matches!(
            parse_draft_plan("Step 1: VLM - look at the image"),
            Err(PlanError::UnknownStepKind(_))
        ));
    }

    #[test]
    fn variants_and_renumbering() {
        let s = parse_draft_plan("```\nStep_4 - llm: classify\n**Step 7:** SQL: count rows\n```").unwrap();
        assert_eq!(kinds(&s), vec![StepKind::Llm, StepKind::Sql]);
        assert_eq!(s[1].index, 2);
        assert_eq!(s[1].description, "count rows");
        // a step sentence without a kind word is prose
        assert_eq!(parse_draft_plan("Step 1 is to read the table"), Err(PlanError::NoStepsFound));
    }

    #[test]
    fn later_headed_plan_replaces_earlier_one() {
        let text = "Plan:\nStep 1: SQL - filter\n\nStep 2: SQL - extract\n\nStep 3: LLM - summarize\n\nOptimized Plan:\nStep 1: SQL - filter and extract\n\nStep 2: LLM - summarize";
        let s = parse_draft_plan(text).unwrap();
        assert_eq!(kinds(&s), vec![StepKind::Sql, StepKind::Llm]);
        assert_eq!(s[1].description, "summarize");
    }

    #[test]
    fn stars_inside_descriptions_survive() {
        let s = parse_draft_plan("SQL: keep recent rows:\nSELECT * FROM m WHERE y > 2018;\nLLM: judge each row").unwrap();
        assert_eq!(s[0].description, "keep recent rows: SELECT * FROM m WHERE y > 2018;");
        assert_eq!(s[1].kind, StepKind::Llm);
    }

    #[test]
    fn round_trip() {
        let s = parse_draft_plan(VERIFY_RESPONSE).unwrap();
        assert_eq!(parse_draft_plan(&serialize_draft_plan(&s)).unwrap(), s);
    }
}
