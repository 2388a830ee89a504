use std::sync::OnceLock;

use regex::Regex;

use super::sql::{last_created_table, last_semicolon_end};
use super::{LlmStep, LlmTarget, Plan, PlanError, PlanStep, SqlStep};

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // `Step_1 - SQL:`, `Step 2: LLM -`, `SQL_Step -`, `LLM Step:`
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s*#>]*(?:step[\s_]*(\d+)[\s*]*[-–:.)]?[\s*]*([A-Za-z]+)\b|(sql|llm)[\s_]*step\b(?:[\s_]*\d+)?)[\s*]*[-–—:]*[\s*]*(.*)$",
        )
        .expect("valid regex")
    })
}

fn field_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:[-*•]\s*)?\**\s*(reason|table\s*name|source\s*table|original\s+columns?(?:\s+to\s+be\s+used)?|input\s+columns?|columns?\s+to\s+be\s+used|llm\s+prompt|prompt|new\s+column\s+name|new\s+column)\s*\**\s*:\s*(.*)$",
        )
        .expect("valid regex")
    })
}

fn table_created_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*table\s+created\s*:\s*(.*)$").expect("valid regex"))
}

#[derive(Debug)]
enum Header {
    Sql(String),
    Llm(String),
}

fn parse_header(line: &str) -> Result<Option<Header>, PlanError> {
    let Some(cap) = header_re().captures(line) else {
        return Ok(None);
    };
    let rest = cap.get(4).map_or("", |m| m.as_str()).to_string();
    let word = cap
        .get(2)
        .or_else(|| cap.get(3))
        .map(|m| m.as_str().to_ascii_uppercase())
        .unwrap_or_default();
    match word.as_str() {
        "SQL" => Ok(Some(Header::Sql(rest))),
        // `Step 1: SELECT ...` carries the statement in place of a kind word
        "SELECT" | "CREATE" | "WITH" | "INSERT" | "UPDATE" | "DELETE" | "DROP" | "ALTER" if cap.get(2).is_some() => {
            let start = cap.get(2).expect("group 2").start();
            Ok(Some(Header::Sql(line[start..].to_string())))
        }
        "LLM" => Ok(Some(Header::Llm(rest))),
        w if cap.get(2).is_some() && w.len() <= 5 && cap[2].chars().all(|c| c.is_ascii_uppercase()) => {
            Err(PlanError::UnknownStepKind(line.trim().to_string()))
        }
        _ => Ok(None),
    }
}

fn clean_value(v: &str) -> String {
    let v = v.trim().trim_matches('*').trim();
    let v = v.trim_end_matches('.').trim();
    v.trim_matches(|c| matches!(c, '"' | '\'' | '`')).trim().to_string()
}

fn clean_identifier(v: &str) -> String {
    let v = clean_value(v);
    v.split_whitespace().collect::<Vec<_>>().join("_")
}

fn split_columns(v: &str) -> Vec<String> {
    let v = v.trim().trim_start_matches('[').trim_end_matches('.').trim_end_matches(']');
    v.split([',', ';'])
        .map(|c| clean_value(c.trim().trim_matches(|c| matches!(c, '[' | ']'))))
        .filter(|c| !c.is_empty())
        .collect()
}

fn fenced_body(lines: &[&str]) -> Option<String> {
    let start = lines.iter().position(|l| l.trim_start().starts_with("```"))?;
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim_start().starts_with("```"))
        .map_or(lines.len(), |p| start + 1 + p);
    Some(lines[start + 1..end].join("\n"))
}

fn parse_sql_block(index: usize, rest: &str, body: &[&str]) -> SqlStep {
    let mut hint = None;
    let mut kept: Vec<&str> = Vec::new();
    for l in body {
        if let Some(c) = table_created_re().captures(l) {
            if hint.is_none() {
                hint = Some(clean_identifier(&c[1]));
            }
        } else {
            kept.push(l);
        }
    }
    let mut text = match fenced_body(&kept) {
        Some(f) => f,
        None => {
            let mut all = Vec::new();
            if !rest.trim().is_empty() {
                all.push(rest.trim());
            }
            all.extend(kept.iter().copied());
            all.join("\n")
        }
    };
    if let Some(end) = last_semicolon_end(&text) {
        text.truncate(end);
    } else if let Some(p) = text.lines().position(|l| l.trim_start().starts_with("Dataframe")) {
        text = text.lines().take(p).collect::<Vec<_>>().join("\n");
    }
    let sql_text = text.trim().to_string();
    let output_table = last_created_table(&sql_text)
        .or(hint.filter(|h| !h.is_empty()))
        .unwrap_or_else(|| format!("step{index}_result"));
    SqlStep { sql_text, output_table }
}

#[derive(Default)]
struct LlmFields {
    reason: Option<String>,
    table: Option<String>,
    inputs: Option<Vec<String>>,
    prompt: Option<String>,
    targets: Vec<LlmTarget>,
}

fn parse_llm_block(index: usize, rest: &str, body: &[&str]) -> Result<LlmStep, PlanError> {
    let mut f = LlmFields::default();
    // which field receives continuation lines
    let mut open: Option<&'static str> = None;
    let mut lines: Vec<&str> = Vec::new();
    if !rest.trim().is_empty() {
        lines.push(rest);
    }
    lines.extend(body.iter().copied());
    for line in lines {
        if line.trim_start().starts_with("```") {
            continue;
        }
        if let Some(c) = field_re().captures(line) {
            let label = c[1].to_ascii_lowercase();
            let value = c[2].trim().to_string();
            let label = label.split_whitespace().collect::<Vec<_>>().join(" ");
            open = None;
            if label == "reason" {
                f.reason = Some(value);
                open = Some("reason");
            } else if label == "table name" || label == "source table" {
                f.table = Some(clean_identifier(&value));
            } else if label.contains("column") && !label.starts_with("new") {
                f.inputs = Some(split_columns(&value));
            } else if label.contains("prompt") {
                f.prompt = Some(value);
                open = Some("prompt");
            } else {
                let Some(prompt) = f.prompt.take() else {
                    return Err(PlanError::MalformedLlmStep {
                        step: index,
                        missing_field: "LLM prompt".into(),
                    });
                };
                let Some(inputs) = f.inputs.clone() else {
                    return Err(PlanError::MalformedLlmStep {
                        step: index,
                        missing_field: "original column to be used".into(),
                    });
                };
                f.targets.push(LlmTarget {
                    input_columns: inputs,
                    prompt: prompt.trim().to_string(),
                    new_column: clean_identifier(&value),
                });
            }
            continue;
        }
        let t = line.trim();
        if t.is_empty() {
            open = None;
            continue;
        }
        match open {
            Some("reason") => {
                let r = f.reason.get_or_insert_with(String::new);
                r.push(' ');
                r.push_str(t);
            }
            Some("prompt") => {
                let p = f.prompt.get_or_insert_with(String::new);
                p.push(' ');
                p.push_str(t);
            }
            _ => {}
        }
    }
    let missing = |name: &str| PlanError::MalformedLlmStep {
        step: index,
        missing_field: name.into(),
    };
    let table = f.table.filter(|t| !t.is_empty()).ok_or_else(|| missing("Table name"))?;
    if f.targets.is_empty() {
        if f.inputs.is_none() {
            return Err(missing("original column to be used"));
        }
        if f.prompt.is_none() {
            return Err(missing("LLM prompt"));
        }
        return Err(missing("New column name"));
    }
    if f.targets.iter().any(|t| t.new_column.is_empty()) {
        return Err(missing("New column name"));
    }
    Ok(LlmStep {
        reason: f.reason.map(|r| r.trim().to_string()).unwrap_or_default(),
        source_table: table,
        targets: f.targets,
    })
}

/// Parses a code-generation response into an executable plan.
pub fn parse_executable_plan(text: &str, base_table: &str) -> Result<Plan, PlanError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut blocks: Vec<(Header, Vec<&str>)> = Vec::new();
    let mut in_fence = false;
    for line in &lines {
        if line.trim_start().starts_with("```") {
            // A fence opening right after a header belongs to that step.
            in_fence = !in_fence;
            if let Some((_, body)) = blocks.last_mut() {
                body.push(line);
            }
            continue;
        }
        let header = if in_fence { None } else { parse_header(line)? };
        match header {
            Some(h) => blocks.push((h, Vec::new())),
            None => {
                if let Some((_, body)) = blocks.last_mut() {
                    body.push(line);
                }
            }
        }
    }
    if blocks.is_empty() {
        return Err(PlanError::NoStepsFound);
    }
    let mut steps = Vec::with_capacity(blocks.len());
    for (i, (header, body)) in blocks.into_iter().enumerate() {
        let index = i + 1;
        let step = match header {
            Header::Sql(rest) => PlanStep::Sql(parse_sql_block(index, &rest, &body)),
            Header::Llm(rest) => PlanStep::Llm(parse_llm_block(index, &rest, &body)?),
        };
        steps.push(step);
    }
    Ok(Plan::new(base_table, steps))
}

/// Emits the `Step_<n> - SQL:` / `Step_<n> - LLM:` grammar accepted by
/// [`parse_executable_plan`].
pub fn serialize_plan(plan: &Plan) -> String {
    let mut out = Vec::new();
    for (i, step) in plan.steps.iter().enumerate() {
        let n = i + 1;
        match step {
            PlanStep::Sql(s) => {
                let mut block = format!("Step_{n} - SQL:\n{}", s.sql_text);
                if last_created_table(&s.sql_text).as_deref() != Some(s.output_table.as_str()) {
                    block.push_str(&format!("\nTable created: {}", s.output_table));
                }
                out.push(block);
            }
            PlanStep::Llm(l) => {
                let mut block = format!("Step_{n} - LLM:\n- Reason: {}\n- Table name: {}", l.reason, l.source_table);
                for t in &l.targets {
                    block.push_str(&format!(
                        "\n- original column to be used: {}\n- LLM prompt: {}\n- New column name: {}",
                        t.input_columns.join(", "),
                        t.prompt,
                        t.new_column
                    ));
                }
                out.push(block);
            }
        }
    }
    out.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const STEP1: &str = "LLM_Step -
- Reason: Standardize the Year column to correct format.
- Table name: New_York_Americans_soccer
- original column to be used: Year
- LLM prompt: Extract the year from phrases like \"Spring 1932\" or \"Fall 1932\" and
standardize all entries to a YYYY format. Ensure the output is consistent across all
entries.
- New column name: Year_Formatted.

Dataframe create after LLM Step

Year_Formatted Division League    Reg_Season              Playoffs           National_Cup
0   1931       1.0      ASL        6th (Fall)             No playoff           None
";

    const STEP3: &str = "SQL_Step -
CREATE TABLE first_win_after_1936 AS
SELECT
    Year_Formatted,
    National_Cup
FROM standardized_national_cup
WHERE Year_Formatted > 1936 AND National_Cup = 'Win'
ORDER BY Year_Formatted
LIMIT 1;
Table created: first_win_after_1936
Dataframe created after loading from first_win_after_1936 ...
   Year_Formatted National_Cup
0  1953     Win
";

    #[test]
    fn llm_block_fields() {
        let p = parse_executable_plan(STEP1, "New_York_Americans_soccer").unwrap();
        let PlanStep::Llm(l) = &p.steps[0] else { panic!() };
        assert_eq!(l.source_table, "New_York_Americans_soccer");
        assert_eq!(l.targets[0].input_columns, vec!["Year"]);
        assert_eq!(l.targets[0].new_column, "Year_Formatted");
        assert!(l.targets[0].prompt.contains("standardize all entries to a YYYY format"));
    }

    #[test]
    fn sql_block_output_table() {
        let p = parse_executable_plan(STEP3, "t").unwrap();
        let PlanStep::Sql(s) = &p.steps[0] else { panic!() };
        assert_eq!(s.output_table, "first_win_after_1936");
        assert!(s.sql_text.ends_with("LIMIT 1;"));
        assert!(!s.sql_text.contains("Dataframe"));
    }

    #[test]
    fn missing_new_column_is_malformed() {
        let text = "Step_1 - LLM:\n- Reason: r\n- Table name: t\n- original column to be used: a\n- LLM prompt: p\n";
        assert_eq!(
            parse_executable_plan(text, "t"),
            Err(PlanError::MalformedLlmStep {
                step: 1,
                missing_field: "New column name".into()
            })
        );
    }

    #[test]
    fn header_variants() {
        let text = "Step 1: SQL - SELECT * FROM t;\nStep_2 - LLM:\n- Table name: t\n- original column to be used: a, `b`\n- LLM prompt: p\n- New column name: 'c'\n```sql\nSELECT c FROM t;\n```";
        // the fence after an LLM block is ignored by the LLM parser
        let p = parse_executable_plan(text, "t").unwrap();
        assert_eq!(p.steps.len(), 2);
        let PlanStep::Sql(s) = &p.steps[0] else { panic!() };
        assert_eq!(s.sql_text, "SELECT * FROM t;");
        assert_eq!(s.output_table, "step1_result");
        let PlanStep::Llm(l) = &p.steps[1] else { panic!() };
        assert_eq!(l.targets[0].input_columns, vec!["a", "b"]);
        assert_eq!(l.targets[0].new_column, "c");
        assert!(matches!(parse_executable_plan("nothing", "t"), Err(PlanError::NoStepsFound)));
    }

    #[test]
    fn statement_in_header() {
        let text = "SQL Queries Generated -\n\nStep 1: SELECT * FROM t WHERE\na > 1;\n\nStep3: CREATE TABLE s AS SELECT * FROM step1_result\nORDER BY a;\n";
        let p = parse_executable_plan(text, "t").unwrap();
        assert_eq!(p.steps.len(), 2);
        let PlanStep::Sql(s) = &p.steps[0] else { panic!() };
        assert_eq!(s.sql_text, "SELECT * FROM t WHERE\na > 1;");
        assert_eq!(p.steps[1].output_table(), "s");
    }

    #[test]
    fn fenced_sql() {
        let text = "Step_1 - SQL: filter rows\n```sql\nCREATE TABLE f AS SELECT * FROM t WHERE a > 1;\n```\n";
        let p = parse_executable_plan(text, "t").unwrap();
        let PlanStep::Sql(s) = &p.steps[0] else { panic!() };
        assert_eq!(s.sql_text, "CREATE TABLE f AS SELECT * FROM t WHERE a > 1;");
        assert_eq!(s.output_table, "f");
    }

    #[test]
    fn round_trip_and_empty() {
        let mut p = parse_executable_plan(&format!("{STEP1}\n{STEP3}"), "New_York_Americans_soccer").unwrap();
        assert_eq!(parse_executable_plan(&serialize_plan(&p), &p.base_table).unwrap(), p);
        p.steps.clear();
        assert_eq!(serialize_plan(&p), "");
        let one = Plan::new("t", vec![PlanStep::Sql(SqlStep { sql_text: "SELECT 1".into(), output_table: "x".into() })]);
        let text = serialize_plan(&one);
        assert!(text.contains("Step_1 - SQL:"));
        assert_eq!(parse_executable_plan(&text, "t").unwrap(), one);
    }
}
