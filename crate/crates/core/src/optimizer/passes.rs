//! Individual rewrites. Each returns `None` when it finds nothing it can
//! prove safe.

use std::collections::BTreeMap;

use crate::plan::sql::{
    classify, referenced_tables, rename_tables, select_parts, split_statements, SelectParts, StatementKind,
};
use crate::plan::{llm_snapshot_name, llm_step_is_consumed, step_output_is_consumed, LlmStep, Plan, PlanStep, SqlStep};

/// A rewritten step list plus, for every new step, the old steps it came from.
pub(crate) struct Rewrite {
    pub steps: Vec<PlanStep>,
    pub origins: Vec<Vec<usize>>,
}

impl Rewrite {
    /// Renames `<source>_llm<index>` references whose index moved.
    /// Snapshots are only read after they are made, so one forward sweep
    /// both applies and extends the rename map.
    pub fn finish(self, old: &Plan) -> Plan {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        let mut steps = Vec::with_capacity(self.steps.len());
        for (n, (step, origins)) in self.steps.into_iter().zip(&self.origins).enumerate() {
            let renamed = |t: &str, map: &BTreeMap<String, String>| map.get(&t.to_ascii_lowercase()).cloned();
            let step = match step {
                PlanStep::Sql(mut q) => {
                    q.sql_text = rename_tables(&q.sql_text, &map);
                    if let Some(t) = renamed(&q.output_table, &map) {
                        q.output_table = t;
                    }
                    PlanStep::Sql(q)
                }
                PlanStep::Llm(mut l) => {
                    if let Some(t) = renamed(&l.source_table, &map) {
                        l.source_table = t;
                    }
                    for &o in origins {
                        if let PlanStep::Llm(prev) = &old.steps[o] {
                            let from = llm_snapshot_name(&prev.source_table, o + 1);
                            let to = llm_snapshot_name(&l.source_table, n + 1);
                            if !from.eq_ignore_ascii_case(&to) {
                                map.insert(from.to_ascii_lowercase(), to);
                            }
                        }
                    }
                    PlanStep::Llm(l)
                }
            };
            steps.push(step);
        }
        Plan::new(old.base_table.clone(), steps)
    }
}

fn identity_origins(n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|i| vec![i]).collect()
}

fn step_reads(step: &PlanStep, table: &str) -> bool {
    match step {
        PlanStep::Sql(s) => split_statements(&s.sql_text)
            .iter()
            .any(|st| referenced_tables(st).iter().any(|t| t.eq_ignore_ascii_case(table))),
        PlanStep::Llm(l) => l.source_table.eq_ignore_ascii_case(table),
    }
}

fn read_later(plan: &Plan, after: usize, table: &str) -> bool {
    plan.steps[after + 1..].iter().any(|s| step_reads(s, table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Dropped {
    Sql,
    Llm,
}

/// Removes the first non-final step whose output nothing uses.
pub(crate) fn drop_dead_step(plan: &Plan) -> Option<(Plan, Dropped)> {
    let n = plan.steps.len();
    for i in 0..n.saturating_sub(1) {
        let kind = match &plan.steps[i] {
            PlanStep::Sql(s) => {
                let pure = split_statements(&s.sql_text)
                    .iter()
                    .all(|st| matches!(classify(st), StatementKind::Select | StatementKind::CreateTableAs { .. }));
                if !pure || step_output_is_consumed(plan, i) {
                    continue;
                }
                Dropped::Sql
            }
            PlanStep::Llm(l) => {
                let snapshot = llm_snapshot_name(&l.source_table, i + 1);
                if llm_step_is_consumed(plan, i) || read_later(plan, i, &snapshot) {
                    continue;
                }
                Dropped::Llm
            }
        };
        let mut steps = plan.steps.clone();
        steps.remove(i);
        let mut origins = identity_origins(n);
        origins.remove(i);
        return Some((Rewrite { steps, origins }.finish(plan), kind));
    }
    None
}

/// Single statement of a step, without the trailing semicolon.
fn single_statement(s: &SqlStep) -> Option<String> {
    let stmts = split_statements(&s.sql_text);
    (stmts.len() == 1).then(|| stmts[0].clone())
}

/// `(target table or None for a bare SELECT, select text)`.
fn query_of(stmt: &str) -> Option<(Option<String>, String)> {
    match classify(stmt) {
        StatementKind::CreateTableAs { name, select } => Some((Some(name), select)),
        StatementKind::Select => Some((None, stmt.to_string())),
        StatementKind::Other => None,
    }
}

fn plain_filter(parts: &SelectParts) -> bool {
    parts.is_star() && !parts.distinct && parts.group_by.is_none() && parts.having.is_none()
}

/// `[LLM on S; CREATE TABLE F AS SELECT * FROM S WHERE ..]` becomes
/// `[CREATE TABLE F AS ..; LLM on F]` so the LLM sees fewer rows.
pub(crate) fn reorder_sql_before_llm(plan: &Plan) -> Option<Plan> {
    for i in 0..plan.steps.len().saturating_sub(1) {
        let (PlanStep::Llm(l), PlanStep::Sql(s)) = (&plan.steps[i], &plan.steps[i + 1]) else {
            continue;
        };
        let Some(stmt) = single_statement(s) else { continue };
        let Some((Some(target), select)) = query_of(&stmt) else { continue };
        let Some(parts) = select_parts(&select) else { continue };
        if !plain_filter(&parts) {
            continue;
        }
        let Some((src, _)) = parts.single_source() else { continue };
        if !src.eq_ignore_ascii_case(&l.source_table)
            || target.eq_ignore_ascii_case(&src)
            || !target.eq_ignore_ascii_case(&s.output_table)
        {
            continue;
        }
        let mentioned = crate::plan::sql::mentioned_names(&stmt);
        if l.new_columns().any(|c| mentioned.contains(&c.to_ascii_lowercase())) {
            continue;
        }
        let snapshot = llm_snapshot_name(&l.source_table, i + 1);
        if read_later(plan, i + 1, &l.source_table) || read_later(plan, i + 1, &snapshot) {
            continue;
        }
        let moved = LlmStep {
            reason: l.reason.clone(),
            source_table: s.output_table.clone(),
            targets: l.targets.clone(),
        };
        let mut steps = plan.steps.clone();
        steps[i] = PlanStep::Sql(s.clone());
        steps[i + 1] = PlanStep::Llm(moved);
        let mut origins = identity_origins(plan.steps.len());
        origins.swap(i, i + 1);
        return Some(Rewrite { steps, origins }.finish(plan));
    }
    None
}

fn and_predicates(a: Option<&str>, b: Option<&str>) -> Option<String> {
    match (a, b) {
        (Some(a), Some(b)) => Some(format!("({}) AND ({})", a.trim(), b.trim())),
        (Some(a), None) => Some(a.trim().to_string()),
        (None, Some(b)) => Some(b.trim().to_string()),
        (None, None) => None,
    }
}

/// Composes `a` (producing `a_out`) into `b` (reading `a_out`), or `None`
/// if the composition might change `b`'s rows.
pub fn compose_selects(a: &str, a_out: &str, b: &str) -> Option<String> {
    let pa = select_parts(a)?;
    let pb = select_parts(b)?;
    let (b_src, b_alias) = pb.single_source()?;
    if !b_src.eq_ignore_ascii_case(a_out) {
        return None;
    }
    // Without its own ORDER BY, a LIMIT in `b` depends on `a`'s row order,
    // which a subquery does not guarantee.
    if pa.order_by.is_some() && pb.order_by.is_none() && pb.limit.is_some() {
        return None;
    }
    if plain_filter(&pa) && pa.limit.is_none() {
        if let Some((a_src, None)) = pa.single_source() {
            if !a_src.eq_ignore_ascii_case(a_out) {
                // Flatten: b's clauses apply directly to a's source.
                let mut map = BTreeMap::new();
                map.insert(a_out.to_ascii_lowercase(), a_src.clone());
                let rn = |t: &Option<String>| t.as_ref().map(|x| rename_tables(x, &map));
                let keep_a_order = pb.order_by.is_none() && pb.group_by.is_none() && !pb.distinct;
                let merged = SelectParts {
                    distinct: pb.distinct,
                    projection: rename_tables(&pb.projection, &map),
                    from: match &b_alias {
                        Some(al) => format!("{a_src} AS {al}"),
                        None => a_src.clone(),
                    },
                    where_: and_predicates(pa.where_.as_deref(), rn(&pb.where_).as_deref()),
                    group_by: rn(&pb.group_by),
                    having: rn(&pb.having),
                    order_by: if keep_a_order { pa.order_by.clone() } else { rn(&pb.order_by) },
                    limit: pb.limit.clone(),
                };
                return Some(merged.render());
            }
        }
    }
    let alias = b_alias.unwrap_or_else(|| a_out.to_string());
    let merged = SelectParts {
        from: format!("({}) AS {alias}", a.trim().trim_end_matches(';').trim()),
        ..pb
    };
    Some(merged.render())
}

/// Fuses adjacent SQL steps where the second reads only the first's output.
pub(crate) fn merge_sql_steps(plan: &Plan) -> Option<Plan> {
    for i in 0..plan.steps.len().saturating_sub(1) {
        let (PlanStep::Sql(a), PlanStep::Sql(b)) = (&plan.steps[i], &plan.steps[i + 1]) else {
            continue;
        };
        let (Some(sa), Some(sb)) = (single_statement(a), single_statement(b)) else { continue };
        let (Some((a_target, a_sel)), Some((b_target, b_sel))) = (query_of(&sa), query_of(&sb)) else {
            continue;
        };
        let a_out = a_target.unwrap_or_else(|| a.output_table.clone());
        if !a_out.eq_ignore_ascii_case(&a.output_table) {
            continue;
        }
        let b_tables = referenced_tables(&b_sel);
        if b_tables.len() != 1 || !b_tables[0].eq_ignore_ascii_case(&a_out) {
            continue;
        }
        if read_later(plan, i + 1, &a_out) {
            continue;
        }
        let Some(merged) = compose_selects(&a_sel, &a_out, &b_sel) else { continue };
        let terminator = if b.sql_text.trim_end().ends_with(';') { ";" } else { "" };
        let sql_text = match &b_target {
            Some(t) => format!("CREATE TABLE {t} AS {merged}{terminator}"),
            None => format!("{merged}{terminator}"),
        };
        let mut steps = plan.steps.clone();
        steps[i] = PlanStep::Sql(SqlStep {
            sql_text,
            output_table: b.output_table.clone(),
        });
        steps.remove(i + 1);
        let mut origins = identity_origins(plan.steps.len());
        origins[i] = vec![i, i + 1];
        origins.remove(i + 1);
        return Some(Rewrite { steps, origins }.finish(plan));
    }
    None
}

/// Fuses adjacent LLM steps over the same table into one multi-target step.
pub(crate) fn merge_llm_steps(plan: &Plan) -> Option<Plan> {
    for i in 0..plan.steps.len().saturating_sub(1) {
        let (PlanStep::Llm(a), PlanStep::Llm(b)) = (&plan.steps[i], &plan.steps[i + 1]) else {
            continue;
        };
        if !a.source_table.eq_ignore_ascii_case(&b.source_table) {
            continue;
        }
        let a_new: Vec<String> = a.new_columns().map(|c| c.to_ascii_lowercase()).collect();
        if b.input_columns().iter().any(|c| a_new.contains(&c.to_ascii_lowercase())) {
            continue;
        }
        if b.new_columns().any(|c| a_new.contains(&c.to_ascii_lowercase())) {
            continue;
        }
        // The merged snapshot would also hold b's columns.
        if read_later(plan, i + 1, &llm_snapshot_name(&a.source_table, i + 1)) {
            continue;
        }
        let reason = [a.reason.trim(), b.reason.trim()]
            .into_iter()
            .filter(|r| !r.is_empty())
            .collect::<Vec<_>>()
            .join("; ");
        let merged = LlmStep {
            reason,
            source_table: a.source_table.clone(),
            targets: a.targets.iter().chain(&b.targets).cloned().collect(),
        };
        let mut steps = plan.steps.clone();
        steps[i] = PlanStep::Llm(merged);
        steps.remove(i + 1);
        let mut origins = identity_origins(plan.steps.len());
        origins[i] = vec![i, i + 1];
        origins.remove(i + 1);
        return Some(Rewrite { steps, origins }.finish(plan));
    }
    None
}
