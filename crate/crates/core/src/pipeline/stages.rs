//! One function per pipeline stage. Each renders its prompt, calls the
//! gateway once (plus at most one retry) and parses the reply.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::llm::{strip_code_fences, Gateway, LlmError, LlmRequest, TemplateId};
use crate::plan::{
    parse_draft_plan, parse_executable_plan, validate_plan, DraftStep, Issue, IssueKind, Plan, PlanError,
    SchemaRegistry,
};
use crate::table::Table;

/// Reply used when the final table cannot answer the question.
pub const NOT_PRESENT: &str = "The answer is not present in the table.";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub data_type: String,
    pub formatting_notes: String,
    pub description: String,
}

/// Renders `id` and sends it, optionally with extra text after the prompt.
pub(crate) fn call(
    gateway: &Gateway,
    id: TemplateId,
    bindings: &HashMap<&str, String>,
    suffix: Option<&str>,
) -> Result<String, LlmError> {
    let mut text = gateway.registry().render(id, bindings)?;
    if let Some(s) = suffix {
        text.push_str(s);
    }
    let cfg = gateway.config();
    let req = LlmRequest {
        template_id: id,
        text,
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        payload: None,
    };
    Ok(gateway.complete(&req)?.text)
}

fn context_suffix(context: Option<&str>) -> Option<String> {
    context
        .filter(|c| !c.trim().is_empty())
        .map(|c| format!("\nRelevant information: {}", c.trim()))
}

/// Names inside a list literal such as `[ 'Score', "Driver", Year ]`.
pub fn parse_name_list(text: &str) -> Vec<String> {
    let body = strip_code_fences(text);
    let inner = match (body.find('['), body.rfind(']')) {
        (Some(a), Some(b)) if a < b => &body[a + 1..b],
        _ => body.as_str(),
    };
    inner
        .split([',', '\n'])
        .map(|s| s.trim().trim_matches(|c| matches!(c, '\'' | '"' | '`' | ' ')).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Columns the model considers relevant, restricted to real column names
/// (in table order). Falls back to every column.
pub fn select_relevant_columns(
    table: &Table,
    question: &str,
    gateway: &Gateway,
    row_limit: usize,
) -> Result<Vec<String>, LlmError> {
    let bindings = HashMap::from([
        ("name", table.name().to_string()),
        ("table", table.render_for_prompt(row_limit)),
        ("question", question.to_string()),
    ]);
    let reply = call(gateway, TemplateId::RelevantColumns, &bindings, None)?;
    let wanted: Vec<String> = parse_name_list(&reply).iter().map(|s| s.to_ascii_lowercase()).collect();
    let picked: Vec<String> = table
        .columns()
        .iter()
        .filter(|c| wanted.contains(&c.name.to_ascii_lowercase()))
        .map(|c| c.name.clone())
        .collect();
    if picked.is_empty() {
        return Ok(table.columns().iter().map(|c| c.name.clone()).collect());
    }
    Ok(picked)
}

fn clean_cell(s: &str) -> String {
    s.trim().trim_matches(|c| matches!(c, '`' | '*')).trim().to_string()
}

/// Pipe-table rows, with rows wrapped over several lines joined back up.
fn pipe_rows(text: &str) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut cur: Option<String> = None;
    for line in text.lines().map(str::trim) {
        if line.starts_with('|') && cur.is_none() {
            cur = Some(line.to_string());
        } else if let Some(c) = cur.as_mut() {
            if line.is_empty() {
                rows.push(cur.take().unwrap_or_default());
                continue;
            }
            c.push(' ');
            c.push_str(line);
        } else {
            continue;
        }
        if cur.as_deref().is_some_and(|c| c.len() > 1 && c.ends_with('|')) {
            rows.push(cur.take().unwrap_or_default());
        }
    }
    rows.extend(cur);
    rows.into_iter()
        .map(|r| {
            let inner = r.trim().trim_start_matches('|').trim_end_matches('|');
            inner.split('|').map(clean_cell).collect()
        })
        .collect()
}

fn is_separator(row: &[String]) -> bool {
    row.iter().all(|c| c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
}

/// Splits a description reply into the table description and per-column
/// metadata for columns of `table`.
pub fn parse_column_description(reply: &str, table: &Table) -> (String, Vec<ColumnMeta>) {
    let body = strip_code_fences(reply);
    let description = body
        .lines()
        .take_while(|l| !l.trim_start().starts_with('|'))
        .filter(|l| {
            let t = l.trim().trim_start_matches('#').trim().to_ascii_lowercase();
            !t.is_empty() && t != "table description" && t != "column details"
        })
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(" ");
    let mut metas: Vec<ColumnMeta> = Vec::new();
    for row in pipe_rows(&body) {
        if row.is_empty() || is_separator(&row) {
            continue;
        }
        let Some(col) = table.column(&row[0]) else {
            continue;
        };
        if metas.iter().any(|m| m.name == col.name) {
            continue;
        }
        let get = |i: usize| row.get(i).cloned().unwrap_or_default();
        metas.push(if row.len() >= 4 {
            ColumnMeta {
                name: col.name.clone(),
                data_type: get(1),
                formatting_notes: get(2),
                description: row[3..].join(" ").trim().to_string(),
            }
        } else {
            ColumnMeta {
                name: col.name.clone(),
                description: row[1..].join(" ").trim().to_string(),
                ..Default::default()
            }
        });
    }
    if metas.is_empty() {
        // No usable table: pick up `Name: text` or `- Name - text` lines.
        for col in table.columns() {
            let found = body.lines().find_map(|l| {
                let t = l.trim().trim_start_matches(['-', '*', ' ']);
                let rest = t.strip_prefix(col.name.as_str())?;
                let rest = rest.trim_start_matches(['*', '`']).trim_start();
                let rest = rest.strip_prefix(':').or_else(|| rest.strip_prefix('-'))?;
                Some(rest.trim().to_string())
            });
            metas.push(ColumnMeta {
                name: col.name.clone(),
                description: found.unwrap_or_default(),
                ..Default::default()
            });
        }
    }
    (description, metas)
}

/// Returns the raw reply (used verbatim in later prompts), the table
/// description and the parsed metadata.
pub fn describe_columns(
    table: &Table,
    question: &str,
    gateway: &Gateway,
    row_limit: usize,
) -> Result<(String, String, Vec<ColumnMeta>), LlmError> {
    if table.columns().is_empty() {
        return Ok((String::new(), String::new(), Vec::new()));
    }
    let bindings = HashMap::from([
        ("name", table.name().to_string()),
        ("table", table.render_for_prompt(row_limit)),
        ("question", question.to_string()),
    ]);
    let reply = call(gateway, TemplateId::ColumnDescription, &bindings, None)?;
    let (desc, metas) = parse_column_description(&reply, table);
    Ok((reply.trim().to_string(), desc, metas))
}

/// Keeps the parts of `paragraph` that matter for the question.
pub fn filter_paragraph(
    paragraph: &str,
    question: &str,
    table: &Table,
    gateway: &Gateway,
    row_limit: usize,
) -> Result<String, LlmError> {
    let bindings = HashMap::from([
        ("name", table.name().to_string()),
        ("table", table.render_for_prompt(row_limit)),
        ("question", question.to_string()),
        ("paragraph", paragraph.to_string()),
    ]);
    let reply = call(gateway, TemplateId::ParagraphFilter, &bindings, None)?;
    let t = strip_code_fences(&reply);
    let t = t.trim();
    if t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("n/a") {
        return Ok(String::new());
    }
    Ok(t.to_string())
}

/// Shared inputs of the planning and codegen prompts.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub table: &'a Table,
    pub question: &'a str,
    /// Column description reply.
    pub description: &'a str,
    pub row_limit: usize,
}

impl PromptInputs<'_> {
    fn bindings(&self) -> HashMap<&'static str, String> {
        HashMap::from([
            ("name", self.table.name().to_string()),
            ("table", self.table.render_for_prompt(self.row_limit)),
            ("description", self.description.to_string()),
            ("question", self.question.to_string()),
        ])
    }
}

const PLAN_RETRY: &str =
    "\n\nYour previous answer contained no steps. Answer only with lines of the form `Step N: SQL - ...` or `Step N: LLM - ...`.";

/// Draft plan; one retry when the reply has no parseable steps.
pub fn generate_plan(inputs: &PromptInputs<'_>, gateway: &Gateway) -> Result<Result<Vec<DraftStep>, PlanError>, LlmError> {
    let mut b = inputs.bindings();
    b.insert("few_shot", crate::llm::few_shot_block());
    let mut last = PlanError::NoStepsFound;
    for suffix in [None, Some(PLAN_RETRY)] {
        let reply = call(gateway, TemplateId::Planning, &b, suffix)?;
        match parse_draft_plan(&reply) {
            Ok(steps) if !steps.is_empty() => return Ok(Ok(steps)),
            Ok(_) => last = PlanError::NoStepsFound,
            Err(e) => last = e,
        }
    }
    Ok(Err(last))
}

/// One verification round; an unparseable reply keeps the draft.
pub fn verify_plan(inputs: &PromptInputs<'_>, draft: &[DraftStep], gateway: &Gateway) -> Result<Vec<DraftStep>, LlmError> {
    let mut b = inputs.bindings();
    b.insert("plan", crate::plan::serialize_draft_plan(draft));
    let reply = call(gateway, TemplateId::VerifyPlan, &b, None)?;
    Ok(match parse_draft_plan(&reply) {
        Ok(steps) if !steps.is_empty() => steps,
        _ => draft.to_vec(),
    })
}

/// Issues that make a plan wrong rather than merely wasteful.
pub fn blocking_issues(issues: &[Issue]) -> Vec<&Issue> {
    issues.iter().filter(|i| i.kind != IssueKind::UnusedOutput).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codegen {
    pub plan: Plan,
    /// Reply the plan was parsed from.
    pub text: String,
    /// Issues left after the repair round.
    pub issues: Vec<Issue>,
}

/// Executable plan with one repair round on parse failure or blocking
/// validation issues. `Ok(None)` when both replies were unparseable.
pub fn generate_executable(
    inputs: &PromptInputs<'_>,
    plan_text: &str,
    gateway: &Gateway,
) -> Result<Option<Codegen>, LlmError> {
    let mut b = inputs.bindings();
    b.insert(
        "columns",
        inputs.table.columns().iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", "),
    );
    b.insert("plan", plan_text.to_string());
    let schema = SchemaRegistry::new().with_table(inputs.table);
    let attempt = |suffix: Option<&str>| -> Result<Option<Codegen>, LlmError> {
        let reply = call(gateway, TemplateId::CodeExecution, &b, suffix)?;
        Ok(parse_executable_plan(&reply, inputs.table.name()).ok().map(|plan| Codegen {
            issues: validate_plan(&plan, &schema),
            plan,
            text: reply.trim().to_string(),
        }))
    };
    let first = attempt(None)?;
    let feedback = match &first {
        None => "\n\nYour previous answer could not be parsed. Use exactly the step format shown above.".to_string(),
        Some(c) if blocking_issues(&c.issues).is_empty() => return Ok(first),
        Some(c) => {
            let list: Vec<String> = blocking_issues(&c.issues).iter().map(|i| format!("- {i}")).collect();
            format!(
                "\n\nYour previous answer had these problems:\n{}\nReturn the corrected steps in the same format.",
                list.join("\n")
            )
        }
    };
    let second = attempt(Some(&feedback))?;
    Ok(match (first, second) {
        (_, Some(s)) if blocking_issues(&s.issues).is_empty() => Some(s),
        (Some(f), Some(s)) if blocking_issues(&f.issues).len() < blocking_issues(&s.issues).len() => Some(f),
        (_, Some(s)) => Some(s),
        (f, None) => f,
    })
}

/// Tidies a free-text answer.
pub fn clean_answer(reply: &str) -> String {
    let mut t = strip_code_fences(reply).trim().to_string();
    for prefix in ["generated answer:", "final answer:", "answer:"] {
        if t.len() >= prefix.len() && t[..prefix.len()].eq_ignore_ascii_case(prefix) {
            t = t[prefix.len()..].trim().to_string();
            break;
        }
    }
    t.trim_matches(|c| c == '"' || c == '\'').trim().to_string()
}

/// Short answer from the final table. Empty tables and empty replies give
/// [`NOT_PRESENT`] without guessing.
pub fn extract_answer(
    final_table: &Table,
    question: &str,
    context: Option<&str>,
    gateway: &Gateway,
    row_limit: usize,
) -> Result<String, LlmError> {
    if final_table.row_count() == 0 || final_table.columns().is_empty() {
        return Ok(NOT_PRESENT.to_string());
    }
    let bindings = HashMap::from([
        ("name", final_table.name().to_string()),
        ("table", final_table.render_for_prompt(row_limit)),
        ("question", question.to_string()),
    ]);
    let suffix = context_suffix(context);
    let reply = call(gateway, TemplateId::AnswerExtraction, &bindings, suffix.as_deref())?;
    let a = clean_answer(&reply);
    Ok(if a.is_empty() { NOT_PRESENT.to_string() } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{load_table, LoadOptions};

    const DESCRIPTION: &str = "### Table Description
The table `New_York_Americans_soccer` contains historical performance data.

### Column Details

| Column Name        | Data Type   | Formatting Needed                     | Column Description                                                                 |
|--------------------|-------------|------------------------|--------------|
| Year               | String      | Standardize to a consistent format
| Represents the year or season of the soccer performance. |
| Division           | Float       | Convert to Integer (if applicable)
| Indicates the division in which the team played. |
| National_Cup       | String      | Standardize and clean
| Indicates the outcome of the national cup. |
";

    fn soccer() -> Table {
        load_table(
            "Year,Division,National_Cup\n1931,1,None\nSpring 1932,1,1st Round\n".as_bytes(),
            &LoadOptions::named("New_York_Americans_soccer"),
        )
        .unwrap()
    }

    #[test]
    fn name_lists() {
        assert_eq!(parse_name_list("[ 'Score', 'Driver']"), vec!["Score", "Driver"]);
        assert_eq!(parse_name_list("```\n[\"a b\", c]\n```"), vec!["a b", "c"]);
        assert_eq!(parse_name_list("Year, National_Cup"), vec!["Year", "National_Cup"]);
    }

    #[test]
    fn wrapped_pipe_table() {
        let (desc, metas) = parse_column_description(DESCRIPTION, &soccer());
        assert!(desc.starts_with("The table `New_York_Americans_soccer`"));
        assert_eq!(metas.len(), 3);
        assert_eq!(
            metas[0],
            ColumnMeta {
                name: "Year".into(),
                data_type: "String".into(),
                formatting_notes: "Standardize to a consistent format".into(),
                description: "Represents the year or season of the soccer performance.".into(),
            }
        );
        assert_eq!(metas[2].formatting_notes, "Standardize and clean");
    }

    #[test]
    fn description_without_table() {
        let (_, metas) = parse_column_description("Year: the season\n- Division - tier", &soccer());
        assert_eq!(metas.len(), 3);
        assert_eq!(metas[0].description, "the season");
        assert_eq!(metas[1].description, "tier");
        assert_eq!(metas[2].description, "");
        assert!(metas.iter().all(|m| m.data_type.is_empty()));
    }

    #[test]
    fn answers_are_cleaned() {
        assert_eq!(clean_answer("Generated Answer: 17 years"), "17 years");
        assert_eq!(clean_answer("\"Italy\""), "Italy");
        assert_eq!(clean_answer("  42\n"), "42");
    }
}
