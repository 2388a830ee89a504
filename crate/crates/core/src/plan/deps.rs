//! Which step outputs later steps actually use.

use std::collections::HashSet;

use super::sql::{classify, mentioned_names, referenced_tables, select_parts, split_statements, StatementKind};
use super::{llm_snapshot_name, Plan, PlanStep};

/// Table holding the plan's final result.
pub fn final_table(plan: &Plan) -> &str {
    plan.steps.last().map_or(plan.base_table.as_str(), |s| s.output_table())
}

fn step_tables(step: &PlanStep) -> Vec<String> {
    match step {
        PlanStep::Sql(s) => split_statements(&s.sql_text)
            .iter()
            .flat_map(|st| referenced_tables(st))
            .collect(),
        PlanStep::Llm(l) => vec![l.source_table.clone()],
    }
}

fn step_mentions(step: &PlanStep) -> HashSet<String> {
    match step {
        PlanStep::Sql(s) => mentioned_names(&s.sql_text),
        PlanStep::Llm(l) => l
            .targets
            .iter()
            .flat_map(|t| t.input_columns.iter().map(|c| c.to_ascii_lowercase()))
            .chain(std::iter::once(l.source_table.to_ascii_lowercase()))
            .collect(),
    }
}

/// True when every statement is a plain SELECT or `CREATE TABLE .. AS SELECT`.
pub(crate) fn is_pure_sql(sql_text: &str) -> bool {
    let stmts = split_statements(sql_text);
    !stmts.is_empty()
        && stmts
            .iter()
            .all(|s| matches!(classify(s), StatementKind::Select | StatementKind::CreateTableAs { .. }))
}

/// Whether the result of step `i` (0-based) is read by a later step or is
/// the plan's final result. Steps with side effects beyond creating their
/// output table always count as consumed.
pub fn step_output_is_consumed(plan: &Plan, i: usize) -> bool {
    match &plan.steps[i] {
        PlanStep::Llm(_) => llm_step_is_consumed(plan, i),
        PlanStep::Sql(s) => {
            if i + 1 == plan.steps.len() || !is_pure_sql(&s.sql_text) {
                return true;
            }
            let created: Vec<String> = split_statements(&s.sql_text)
                .iter()
                .filter_map(|st| match classify(st) {
                    StatementKind::CreateTableAs { name, .. } => Some(name.to_ascii_lowercase()),
                    _ => None,
                })
                .chain(std::iter::once(s.output_table.to_ascii_lowercase()))
                .collect();
            plan.steps[i + 1..].iter().any(|later| {
                step_tables(later)
                    .iter()
                    .any(|t| created.contains(&t.to_ascii_lowercase()))
            })
        }
    }
}

/// Whether any column added by LLM step `i` can reach a later step or the
/// final table. A column is consumed if a later step names it, if a later
/// step reads a table carrying it through `*` (or in a way we cannot
/// analyse), or if a carrying table is the final result.
pub fn llm_step_is_consumed(plan: &Plan, i: usize) -> bool {
    let PlanStep::Llm(l) = &plan.steps[i] else {
        return true;
    };
    let cols: HashSet<String> = l.new_columns().map(|c| c.to_ascii_lowercase()).collect();
    let mut carrying: HashSet<String> = [
        l.source_table.to_ascii_lowercase(),
        llm_snapshot_name(&l.source_table, i + 1).to_ascii_lowercase(),
    ]
    .into_iter()
    .collect();
    for (j, later) in plan.steps.iter().enumerate().skip(i + 1) {
        if !step_mentions(later).is_disjoint(&cols) {
            return true;
        }
        let s = match later {
            PlanStep::Sql(s) => s,
            PlanStep::Llm(next) => {
                // A later in-place step snapshots the carrier, columns included.
                if carrying.contains(&next.source_table.to_ascii_lowercase()) {
                    carrying.insert(llm_snapshot_name(&next.source_table, j + 1).to_ascii_lowercase());
                }
                continue;
            }
        };
        for stmt in split_statements(&s.sql_text) {
            let reads_carrier = referenced_tables(&stmt)
                .iter()
                .any(|t| carrying.contains(&t.to_ascii_lowercase()));
            let (target, select) = match classify(&stmt) {
                StatementKind::CreateTableAs { name, select } => (Some(name), select),
                StatementKind::Select => (None, stmt.clone()),
                StatementKind::Other => {
                    if reads_carrier {
                        return true;
                    }
                    continue;
                }
            };
            let target = target.unwrap_or_else(|| s.output_table.clone()).to_ascii_lowercase();
            if !reads_carrier {
                // Overwriting a carrier with unrelated content drops the columns.
                carrying.remove(&target);
                continue;
            }
            match select_parts(&select) {
                Some(p) if !p.projection.contains('*') => {
                    carrying.remove(&target);
                }
                Some(_) => {
                    carrying.insert(target);
                }
                None => return true,
            }
        }
    }
    carrying.contains(&final_table(plan).to_ascii_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{LlmStep, SqlStep};

    fn sql(text: &str, out: &str) -> PlanStep {
        PlanStep::Sql(SqlStep {
            sql_text: text.into(),
            output_table: out.into(),
        })
    }

    fn llm(src: &str, new: &str) -> PlanStep {
        PlanStep::Llm(LlmStep::single("", src, vec!["a".into()], "p", new))
    }

    #[test]
    fn sql_output_use() {
        let p = Plan::new(
            "t",
            vec![
                sql("CREATE TABLE x AS SELECT * FROM t", "x"),
                sql("CREATE TABLE y AS SELECT * FROM t", "y"),
                sql("CREATE TABLE z AS SELECT * FROM y", "z"),
            ],
        );
        assert!(!step_output_is_consumed(&p, 0));
        assert!(step_output_is_consumed(&p, 1));
        assert!(step_output_is_consumed(&p, 2));
    }

    #[test]
    fn later_snapshot_carries_earlier_columns() {
        let p = Plan::new(
            "t",
            vec![
                llm("t", "u1"),
                llm("t", "u2"),
                sql("CREATE TABLE o AS SELECT * FROM t_llm2", "o"),
            ],
        );
        assert!(llm_step_is_consumed(&p, 0));
    }

    #[test]
    fn llm_columns_carry_through_star() {
        let p = Plan::new("t", vec![llm("t", "n"), sql("CREATE TABLE f AS SELECT * FROM t WHERE a > 1", "f")]);
        assert!(llm_step_is_consumed(&p, 0));
        let p = Plan::new("t", vec![llm("t", "n"), sql("CREATE TABLE f AS SELECT a FROM t", "f")]);
        assert!(!llm_step_is_consumed(&p, 0));
        let p = Plan::new("t", vec![llm("t", "n"), sql("CREATE TABLE f AS SELECT a, n FROM t", "f")]);
        assert!(llm_step_is_consumed(&p, 0));
        let p = Plan::new("t", vec![llm("t", "n")]);
        assert!(llm_step_is_consumed(&p, 0));
    }
}
