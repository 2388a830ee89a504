use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::deps::{is_pure_sql, llm_step_is_consumed, step_output_is_consumed};
use super::sql::{
    classify, column_refs, created_table, infer_select_columns, output_aliases, referenced_tables,
    split_statements, table_aliases, tokenize, StatementKind,
};
use super::{llm_snapshot_name, Plan, PlanStep};
use crate::table::Table;

/// Known tables and their columns. Lookups are case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaRegistry {
    tables: BTreeMap<String, (String, Vec<String>)>,
}

impl SchemaRegistry {
    pub fn new() -> Self {
        SchemaRegistry::default()
    }

    pub fn insert(&mut self, table: impl Into<String>, columns: Vec<String>) {
        let table = table.into();
        self.tables.insert(table.to_ascii_lowercase(), (table, columns));
    }

    pub fn with_table(mut self, table: &Table) -> Self {
        self.insert(table.name(), table.column_names().iter().map(|c| c.to_string()).collect());
        self
    }

    pub fn columns(&self, table: &str) -> Option<&[String]> {
        self.tables.get(&table.to_ascii_lowercase()).map(|(_, c)| c.as_slice())
    }

    pub fn contains(&self, table: &str) -> bool {
        self.tables.contains_key(&table.to_ascii_lowercase())
    }
}

impl From<&Table> for SchemaRegistry {
    fn from(t: &Table) -> Self {
        SchemaRegistry::new().with_table(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    UnknownTable,
    UnknownColumn,
    ColumnCollision,
    UnusedOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    /// 1-based step index.
    pub step: usize,
    pub kind: IssueKind,
    pub name: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            IssueKind::UnknownTable => "unknown table",
            IssueKind::UnknownColumn => "unknown column",
            IssueKind::ColumnCollision => "new column already exists",
            IssueKind::UnusedOutput => "output never used",
        };
        write!(f, "step {}: {what} `{}`", self.step, self.name)
    }
}

/// Simulated schema state: `None` means the table exists but its columns
/// could not be derived.
type State = BTreeMap<String, Option<Vec<String>>>;

fn known_schemas(state: &State) -> BTreeMap<String, Vec<String>> {
    state
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|c| (k.clone(), c.clone())))
        .collect()
}

fn has_ci(cols: &[String], name: &str) -> bool {
    cols.iter().any(|c| c.eq_ignore_ascii_case(name))
}

fn is_drop_if_exists(stmt: &str) -> bool {
    let words: Vec<String> = tokenize(stmt)
        .into_iter()
        .filter(|t| !t.is_trivia())
        .take(4)
        .map(|t| t.text.to_ascii_lowercase())
        .collect();
    words.len() == 4 && words[0] == "drop" && words[2] == "if" && words[3] == "exists"
}

fn alter_add_column(stmt: &str) -> Option<(String, String)> {
    let toks: Vec<_> = tokenize(stmt).into_iter().filter(|t| !t.is_trivia()).collect();
    if toks.len() >= 5 && toks[0].is_word("alter") && toks[1].is_word("table") && toks[3].is_word("add") {
        let table = toks[2].ident()?;
        let col = if toks[4].is_word("column") { toks.get(5)?.ident()? } else { toks[4].ident()? };
        return Some((table, col));
    }
    None
}

fn check_columns(step: usize, stmt: &str, state: &State, issues: &mut Vec<Issue>) {
    let tables = referenced_tables(stmt);
    let mut schemas: BTreeMap<String, &Vec<String>> = BTreeMap::new();
    for t in &tables {
        match state.get(&t.to_ascii_lowercase()) {
            Some(Some(cols)) => {
                schemas.insert(t.to_ascii_lowercase(), cols);
            }
            _ => return,
        }
    }
    let aliases = table_aliases(stmt);
    let outputs = output_aliases(stmt);
    let all: Vec<&String> = schemas.values().flat_map(|c| c.iter()).collect();
    let mut seen = HashSet::new();
    for r in column_refs(stmt) {
        let ok = match &r.qualifier {
            Some(q) => match aliases.get(&q.to_ascii_lowercase()) {
                Some(t) => match schemas.get(&t.to_ascii_lowercase()) {
                    Some(cols) => has_ci(cols, &r.name),
                    // subquery alias
                    None => true,
                },
                None => true,
            },
            None => all.iter().any(|c| c.eq_ignore_ascii_case(&r.name)) || outputs.contains(&r.name.to_ascii_lowercase()),
        };
        if !ok && seen.insert(r.name.to_ascii_lowercase()) {
            issues.push(Issue {
                step,
                kind: IssueKind::UnknownColumn,
                name: r.name.clone(),
            });
        }
    }
}

/// Checks table and column references step by step while simulating how
/// each step changes the schema. Issues are returned, never raised.
pub fn validate_plan(plan: &Plan, schema: &SchemaRegistry) -> Vec<Issue> {
    let mut state: State = schema
        .tables
        .iter()
        .map(|(k, (_, cols))| (k.clone(), Some(cols.clone())))
        .collect();
    let mut issues = Vec::new();
    let last = plan.steps.len();
    for (i, step) in plan.steps.iter().enumerate() {
        let n = i + 1;
        match step {
            PlanStep::Sql(s) => {
                let stmts = split_statements(&s.sql_text);
                for (k, stmt) in stmts.iter().enumerate() {
                    let kind = classify(stmt);
                    if !is_drop_if_exists(stmt) {
                        for t in referenced_tables(stmt) {
                            if !state.contains_key(&t.to_ascii_lowercase()) {
                                issues.push(Issue {
                                    step: n,
                                    kind: IssueKind::UnknownTable,
                                    name: t,
                                });
                            }
                        }
                    }
                    let with_cte = stmt.trim_start().get(..4).is_some_and(|w| w.eq_ignore_ascii_case("with"));
                    match &kind {
                        StatementKind::CreateTableAs { name, select } => {
                            if !with_cte {
                                check_columns(n, select, &state, &mut issues);
                            }
                            let cols = infer_select_columns(select, &known_schemas(&state));
                            state.insert(name.to_ascii_lowercase(), cols);
                        }
                        StatementKind::Select => {
                            if !with_cte {
                                check_columns(n, stmt, &state, &mut issues);
                            }
                            if k + 1 == stmts.len() && !state.contains_key(&s.output_table.to_ascii_lowercase()) {
                                let cols = infer_select_columns(stmt, &known_schemas(&state));
                                state.insert(s.output_table.to_ascii_lowercase(), cols);
                            }
                        }
                        StatementKind::Other => {
                            let lower = stmt.trim_start().to_ascii_lowercase();
                            if lower.starts_with("drop") {
                                for t in referenced_tables(stmt) {
                                    state.remove(&t.to_ascii_lowercase());
                                }
                            } else if let Some((t, c)) = alter_add_column(stmt) {
                                if let Some(Some(cols)) = state.get_mut(&t.to_ascii_lowercase()) {
                                    cols.push(c);
                                }
                            } else if lower.starts_with("alter") {
                                for t in referenced_tables(stmt) {
                                    state.insert(t.to_ascii_lowercase(), None);
                                }
                            } else if let Some(c) = created_table(stmt) {
                                state.insert(c.to_ascii_lowercase(), None);
                            }
                        }
                    }
                }
            }
            PlanStep::Llm(l) => {
                let key = l.source_table.to_ascii_lowercase();
                match state.get(&key).cloned() {
                    None => issues.push(Issue {
                        step: n,
                        kind: IssueKind::UnknownTable,
                        name: l.source_table.clone(),
                    }),
                    Some(cols) => {
                        let mut cols = cols;
                        if let Some(c) = &cols {
                            for input in l.input_columns() {
                                if !has_ci(c, input) {
                                    issues.push(Issue {
                                        step: n,
                                        kind: IssueKind::UnknownColumn,
                                        name: input.to_string(),
                                    });
                                }
                            }
                        }
                        let mut added: Vec<String> = Vec::new();
                        for new in l.new_columns() {
                            let exists = cols.as_ref().is_some_and(|c| has_ci(c, new)) || has_ci(&added, new);
                            if exists {
                                issues.push(Issue {
                                    step: n,
                                    kind: IssueKind::ColumnCollision,
                                    name: new.to_string(),
                                });
                            } else {
                                added.push(new.to_string());
                            }
                        }
                        if let Some(c) = cols.as_mut() {
                            c.extend(added);
                        }
                        state.insert(llm_snapshot_name(&l.source_table, n).to_ascii_lowercase(), cols.clone());
                        state.insert(key, cols);
                    }
                }
            }
        }
        if n < last {
            let unused = match step {
                PlanStep::Sql(s) => is_pure_sql(&s.sql_text) && !step_output_is_consumed(plan, i),
                PlanStep::Llm(_) => !llm_step_is_consumed(plan, i),
            };
            if unused {
                let name = match step {
                    PlanStep::Sql(s) => s.output_table.clone(),
                    PlanStep::Llm(l) => l.new_columns().collect::<Vec<_>>().join(", "),
                };
                issues.push(Issue {
                    step: n,
                    kind: IssueKind::UnusedOutput,
                    name,
                });
            }
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{LlmStep, SqlStep};

    fn soccer() -> SchemaRegistry {
        let mut s = SchemaRegistry::new();
        s.insert(
            "New_York_Americans_soccer",
            ["Year", "Division", "League", "Reg_Season", "Playoffs", "National_Cup"]
                .iter()
                .map(|c| c.to_string())
                .collect(),
        );
        s
    }

    fn sql(text: &str, out: &str) -> PlanStep {
        PlanStep::Sql(SqlStep {
            sql_text: text.into(),
            output_table: out.into(),
        })
    }

    #[test]
    fn ghost_table() {
        let p = Plan::new("New_York_Americans_soccer", vec![sql("SELECT * FROM ghosts", "x")]);
        let issues = validate_plan(&p, &soccer());
        assert_eq!(issues[0].kind, IssueKind::UnknownTable);
        assert_eq!(issues[0].name, "ghosts");
    }

    #[test]
    fn collision_with_existing_column() {
        let p = Plan::new(
            "New_York_Americans_soccer",
            vec![PlanStep::Llm(LlmStep::single("", "New_York_Americans_soccer", vec!["Year".into()], "p", "Year"))],
        );
        let issues = validate_plan(&p, &soccer());
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::ColumnCollision);
    }

    #[test]
    fn unknown_column_and_unused_output() {
        let p = Plan::new(
            "New_York_Americans_soccer",
            vec![
                sql("CREATE TABLE a AS SELECT Year, Colour FROM New_York_Americans_soccer", "a"),
                sql("CREATE TABLE b AS SELECT * FROM New_York_Americans_soccer", "b"),
            ],
        );
        let kinds: Vec<_> = validate_plan(&p, &soccer()).into_iter().map(|i| (i.step, i.kind, i.name)).collect();
        assert_eq!(
            kinds,
            vec![
                (1, IssueKind::UnknownColumn, "Colour".to_string()),
                (1, IssueKind::UnusedOutput, "a".to_string())
            ]
        );
    }

    #[test]
    fn schema_evolves_across_steps() {
        let p = Plan::new(
            "New_York_Americans_soccer",
            vec![
                PlanStep::Llm(LlmStep::single("", "New_York_Americans_soccer", vec!["Year".into()], "p", "Y2")),
                sql("CREATE TABLE s AS SELECT Y2, CASE WHEN National_Cup LIKE '%Champion%' THEN 'Win' ELSE 'No' END AS Cup FROM New_York_Americans_soccer", "s"),
                sql("CREATE TABLE f AS SELECT Y2 FROM s WHERE Cup = 'Win' ORDER BY Y2 LIMIT 1", "f"),
            ],
        );
        assert!(validate_plan(&p, &soccer()).is_empty());
    }
}
