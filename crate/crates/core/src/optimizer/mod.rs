//! Plan rewrites that cut LLM and SQL steps without changing the final table.

mod passes;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::executor::{execute_plan, ExecOptions};
use crate::llm::{Gateway, GatewayConfig, LlmBackend, TemplateId};
use crate::plan::{parse_executable_plan, serialize_plan, validate_plan, Plan, SchemaRegistry, StepKind};
use crate::table::Table;

pub use passes::compose_selects;

/// Which rewrites `optimize` may apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub dead_steps: bool,
    pub sql_reorder: bool,
    pub sql_merge: bool,
    pub llm_merge: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            dead_steps: true,
            sql_reorder: true,
            sql_merge: true,
            llm_merge: true,
        }
    }
}

impl OptimizerConfig {
    pub fn none() -> Self {
        OptimizerConfig {
            dead_steps: false,
            sql_reorder: false,
            sql_merge: false,
            llm_merge: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationStats {
    pub llm_drops: usize,
    pub sql_drops: usize,
    pub sql_merges: usize,
    pub sql_reorders: usize,
    pub llm_merges: usize,
    pub steps_before: usize,
    pub steps_after: usize,
    pub llm_steps_before: usize,
    pub llm_steps_after: usize,
    pub sql_steps_before: usize,
    pub sql_steps_after: usize,
}

impl OptimizationStats {
    /// Steps removed by drops and merges. Reorders remove nothing.
    pub fn removed(&self) -> usize {
        self.llm_drops + self.sql_drops + self.sql_merges + self.llm_merges
    }

    pub fn add(&mut self, other: &OptimizationStats) {
        self.llm_drops += other.llm_drops;
        self.sql_drops += other.sql_drops;
        self.sql_merges += other.sql_merges;
        self.sql_reorders += other.sql_reorders;
        self.llm_merges += other.llm_merges;
        self.steps_before += other.steps_before;
        self.steps_after += other.steps_after;
        self.llm_steps_before += other.llm_steps_before;
        self.llm_steps_after += other.llm_steps_after;
        self.sql_steps_before += other.sql_steps_before;
        self.sql_steps_after += other.sql_steps_after;
    }
}

/// Each reorder swaps one LLM step one position later, so the loop is
/// bounded; the cap only guards against a rewrite that undoes another.
const MAX_REWRITES: usize = 256;

/// Applies enabled rewrites one at a time until none applies. Earlier
/// passes take priority: dead steps, then reorders, SQL merges, LLM merges.
pub fn optimize(plan: &Plan, config: &OptimizerConfig) -> (Plan, OptimizationStats) {
    let mut stats = OptimizationStats {
        steps_before: plan.steps.len(),
        llm_steps_before: plan.count(StepKind::Llm),
        sql_steps_before: plan.count(StepKind::Sql),
        ..Default::default()
    };
    let mut cur = plan.clone();
    for _ in 0..MAX_REWRITES {
        if config.dead_steps {
            if let Some((next, kind)) = passes::drop_dead_step(&cur) {
                match kind {
                    passes::Dropped::Sql => stats.sql_drops += 1,
                    passes::Dropped::Llm => stats.llm_drops += 1,
                }
                cur = next;
                continue;
            }
        }
        if config.sql_reorder {
            if let Some(next) = passes::reorder_sql_before_llm(&cur) {
                stats.sql_reorders += 1;
                cur = next;
                continue;
            }
        }
        if config.sql_merge {
            if let Some(next) = passes::merge_sql_steps(&cur) {
                stats.sql_merges += 1;
                cur = next;
                continue;
            }
        }
        if config.llm_merge {
            if let Some(next) = passes::merge_llm_steps(&cur) {
                stats.llm_merges += 1;
                cur = next;
                continue;
            }
        }
        break;
    }
    stats.steps_after = cur.steps.len();
    stats.llm_steps_after = cur.count(StepKind::Llm);
    stats.sql_steps_after = cur.count(StepKind::Sql);
    (cur, stats)
}

/// Asks the model to rewrite the plan. Any failure, an invalid result or a
/// longer plan returns the input unchanged.
pub fn llm_optimize(plan: &Plan, gateway: &Gateway, schema: &SchemaRegistry, information: &str) -> Plan {
    if plan.steps.len() <= 1 {
        return plan.clone();
    }
    let mut bindings = HashMap::new();
    bindings.insert("information", information.to_string());
    bindings.insert("plan", serialize_plan(plan));
    let Ok(resp) = gateway.complete_template(TemplateId::PlanOptimization, &bindings) else {
        return plan.clone();
    };
    let Ok(candidate) = parse_executable_plan(&resp.text, &plan.base_table) else {
        return plan.clone();
    };
    if candidate.steps.is_empty()
        || candidate.steps.len() > plan.steps.len()
        || !validate_plan(&candidate, schema).is_empty()
    {
        return plan.clone();
    }
    candidate
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Equivalent,
    Divergent(String),
    Inconclusive(String),
}

/// Rows as canonical strings, with columns sorted by lowercased name.
fn normalized(t: &Table) -> (Vec<String>, Vec<Vec<String>>) {
    let mut order: Vec<(String, usize)> = t
        .columns()
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.to_ascii_lowercase(), i))
        .collect();
    order.sort();
    let names = order.iter().map(|(n, _)| n.clone()).collect();
    let mut rows: Vec<Vec<String>> = (0..t.row_count())
        .map(|r| order.iter().map(|&(_, i)| t.columns()[i].values[r].canonical()).collect())
        .collect();
    rows.sort();
    (names, rows)
}

/// Compares two finished tables as multisets of rows.
pub fn compare_tables(a: &Table, b: &Table) -> Verdict {
    let (na, ra) = normalized(a);
    let (nb, rb) = normalized(b);
    if na != nb {
        return Verdict::Divergent(format!("columns differ: {na:?} vs {nb:?}"));
    }
    if ra.len() != rb.len() {
        return Verdict::Divergent(format!("row counts differ: {} vs {}", ra.len(), rb.len()));
    }
    match ra.iter().zip(&rb).position(|(x, y)| x != y) {
        Some(i) => Verdict::Divergent(format!("row {i} differs: {:?} vs {:?}", ra[i], rb[i])),
        None => Verdict::Equivalent,
    }
}

/// Runs both plans on `table` and compares their final tables.
pub fn check_equivalence(plan_a: &Plan, plan_b: &Plan, table: &Table, backend: Arc<dyn LlmBackend>) -> Verdict {
    check_equivalence_with(plan_a, plan_b, table, backend, &ExecOptions::default())
}

pub fn check_equivalence_with(
    plan_a: &Plan,
    plan_b: &Plan,
    table: &Table,
    backend: Arc<dyn LlmBackend>,
    opts: &ExecOptions,
) -> Verdict {
    let run = |p: &Plan| -> Result<Table, String> {
        let gw = Gateway::new(backend.clone(), GatewayConfig::default());
        let trace = execute_plan(p, table, &gw, opts).map_err(|e| e.to_string())?;
        match trace.failure {
            Some(f) => Err(f.to_string()),
            None => Ok(trace.final_result().clone()),
        }
    };
    match (run(plan_a), run(plan_b)) {
        (Ok(a), Ok(b)) => compare_tables(&a, &b),
        (Err(e), _) | (_, Err(e)) => Verdict::Inconclusive(e),
    }
}
