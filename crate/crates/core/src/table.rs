//! In-memory table model: loading delimited text, schema sanitization,
//! projection and prompt rendering.
//!
//! Tables are immutable once built. Every operation that changes shape
//! returns a new [`Table`].

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tokens that load as null unless overridden in [`LoadOptions`].
pub const DEFAULT_NULL_TOKENS: &[&str] = &["", "NaN", "nan", "None", "null", "NULL", "?"];

/// Identifiers that collide with SQL keywords in MySQL or SQLite and get
/// the `_col` suffix during sanitization.
pub const RESERVED_WORDS: &[&str] = &[
    "ALL", "ALTER", "AND", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "CHECK", "COLLATE",
    "COLUMN", "CONSTRAINT", "CREATE", "CROSS", "DEFAULT", "DELETE", "DENSE_RANK", "DESC",
    "DISTINCT", "DIV", "DROP", "ELSE", "END", "ESCAPE", "EXCEPT", "EXISTS", "FALSE", "FOREIGN",
    "FROM", "FULL", "GLOB", "GROUP", "GROUPS", "HAVING", "IN", "INDEX", "INNER", "INSERT",
    "INTERSECT", "INTERVAL", "INTO", "IS", "JOIN", "KEY", "KEYS", "LAG", "LEAD", "LEFT", "LIKE",
    "LIMIT", "MATCH", "MOD", "NATURAL", "NOT", "NULL", "OFFSET", "ON", "OR", "ORDER", "OUTER",
    "OVER", "PARTITION", "PRIMARY", "RANGE", "RANK", "RECURSIVE", "REFERENCES", "REGEXP",
    "REPLACE", "RIGHT", "ROW", "ROWS", "ROW_NUMBER", "SELECT", "SET", "TABLE", "THEN", "TO",
    "TRUE", "UNION", "UNIQUE", "UPDATE", "USING", "VALUES", "WHEN", "WHERE", "WINDOW", "WITH",
];

const INTEGER_SHARE: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("empty input: no header or data rows")]
    EmptyInput,
    #[error("ragged row at record {record}: expected {expected} fields, found {found}")]
    RaggedRow {
        record: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{column}` has {found} values, table has {expected} rows")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("delimited text error: {0}")]
    Format(String),
}

/// Declared type of a column, decided by majority vote over its non-null cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Text,
    Integer,
    Real,
    Date,
    Unknown,
}

impl ColumnType {
    pub fn as_str(self) -> &'static str {
        match self {
            ColumnType::Text => "text",
            ColumnType::Integer => "integer",
            ColumnType::Real => "real",
            ColumnType::Date => "date",
            ColumnType::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Date(NaiveDate),
}

impl Cell {
    pub fn is_null(&self) -> bool {
        matches!(self, Cell::Null)
    }

    /// Parses a raw field into the most specific cell kind.
    pub fn parse(raw: &str, null_tokens: &[String]) -> Cell {
        let trimmed = raw.trim();
        if null_tokens.iter().any(|t| t == trimmed) {
            return Cell::Null;
        }
        match classify(trimmed) {
            Kind::Integer(v) => Cell::Integer(v),
            Kind::Real(v) => Cell::Real(v),
            Kind::Date(d) => Cell::Date(d),
            Kind::Text => Cell::Text(trimmed.to_string()),
        }
    }

    /// Text used in delimited exports. Nulls become the empty field.
    pub fn to_field(&self) -> String {
        match self {
            Cell::Null => String::new(),
            Cell::Integer(v) => v.to_string(),
            Cell::Real(v) => format_real(*v),
            Cell::Text(s) => s.clone(),
            Cell::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }

    /// Text shown to the model. Nulls render as `None`, like a dataframe would.
    pub fn to_prompt_text(&self) -> String {
        match self {
            Cell::Null => "None".to_string(),
            other => other.to_field().replace(['\n', '\r'], " "),
        }
    }

    /// Canonical key for multiset comparison: numbers compare by value.
    pub fn canonical(&self) -> String {
        match self {
            Cell::Null => "\u{0}null".to_string(),
            Cell::Integer(v) => format_real(*v as f64),
            Cell::Real(v) => format_real(*v),
            Cell::Text(s) => s.clone(),
            Cell::Date(d) => d.format("%Y-%m-%d").to_string(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prompt_text())
    }
}

fn format_real(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

enum Kind {
    Integer(i64),
    Real(f64),
    Date(NaiveDate),
    Text,
}

fn classify(s: &str) -> Kind {
    if s.is_empty() {
        return Kind::Text;
    }
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    let looks_numeric = !digits.is_empty()
        && digits.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.')
        && digits
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'));
    if looks_numeric {
        // "007" is an identifier, not the number 7.
        let leading_zero = digits.len() > 1 && digits.starts_with('0') && !digits.starts_with("0.");
        if !leading_zero {
            if let Ok(v) = s.parse::<i64>() {
                return Kind::Integer(v);
            }
            if let Ok(v) = s.parse::<f64>() {
                if v.is_finite() {
                    return Kind::Real(v);
                }
            }
        }
    }
    if s.len() == 10 {
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Kind::Date(d);
        }
    }
    Kind::Text
}

/// Majority-vote type inference over raw fields, then conversion of every
/// field into a cell consistent with the chosen type where possible.
///
/// Fields that do not conform to a typed column (at most 10% of non-null
/// values) are kept verbatim as text cells.
pub fn infer_column(raw: &[String], null_tokens: &[String]) -> (ColumnType, Vec<Cell>) {
    let kinds: Vec<Option<Kind>> = raw
        .iter()
        .map(|r| {
            let t = r.trim();
            if null_tokens.iter().any(|n| n == t) {
                None
            } else {
                Some(classify(t))
            }
        })
        .collect();
    let (mut ints, mut reals, mut dates, mut texts) = (0usize, 0usize, 0usize, 0usize);
    for k in kinds.iter().flatten() {
        match k {
            Kind::Integer(_) => ints += 1,
            Kind::Real(_) => reals += 1,
            Kind::Date(_) => dates += 1,
            Kind::Text => texts += 1,
        }
    }
    let n = ints + reals + dates + texts;
    let share = |c: usize| c as f64 / n as f64;
    let ty = if n == 0 {
        ColumnType::Unknown
    } else if share(ints) >= INTEGER_SHARE {
        ColumnType::Integer
    } else if share(ints + reals) >= INTEGER_SHARE {
        ColumnType::Real
    } else if share(dates) >= INTEGER_SHARE {
        ColumnType::Date
    } else if share(texts) >= INTEGER_SHARE {
        ColumnType::Text
    } else {
        ColumnType::Unknown
    };
    let cells = raw
        .iter()
        .zip(kinds)
        .map(|(r, k)| {
            let t = r.trim();
            match (ty, k) {
                (_, None) => Cell::Null,
                (ColumnType::Text, Some(_)) => Cell::Text(t.to_string()),
                (ColumnType::Real, Some(Kind::Integer(v))) => Cell::Real(v as f64),
                (_, Some(Kind::Integer(v))) => Cell::Integer(v),
                (_, Some(Kind::Real(v))) => Cell::Real(v),
                (_, Some(Kind::Date(d))) => Cell::Date(d),
                (_, Some(Kind::Text)) => Cell::Text(t.to_string()),
            }
        })
        .collect();
    (ty, cells)
}

/// Infers a declared type from already-typed cells (engine read-back).
pub fn infer_type_from_cells(cells: &[Cell]) -> ColumnType {
    let (mut ints, mut reals, mut dates, mut texts) = (0usize, 0usize, 0usize, 0usize);
    for c in cells {
        match c {
            Cell::Null => {}
            Cell::Integer(_) => ints += 1,
            Cell::Real(_) => reals += 1,
            Cell::Date(_) => dates += 1,
            Cell::Text(_) => texts += 1,
        }
    }
    let n = ints + reals + dates + texts;
    if n == 0 {
        ColumnType::Unknown
    } else if ints == n {
        ColumnType::Integer
    } else if ints + reals == n {
        ColumnType::Real
    } else if dates == n {
        ColumnType::Date
    } else if texts == n {
        ColumnType::Text
    } else {
        ColumnType::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub declared_type: ColumnType,
    pub values: Vec<Cell>,
}

impl Column {
    pub fn new(name: impl Into<String>, declared_type: ColumnType, values: Vec<Cell>) -> Self {
        Column {
            name: name.into(),
            declared_type,
            values,
        }
    }

    /// Builds a column from raw text, inferring its type.
    pub fn from_raw(name: impl Into<String>, raw: &[String], null_tokens: &[String]) -> Self {
        let (ty, values) = infer_column(raw, null_tokens);
        Column::new(name, ty, values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, TableError> {
        let row_count = columns.first().map_or(0, |c| c.values.len());
        Table::with_row_count(name, columns, row_count)
    }

    /// Like [`Table::new`] but keeps an explicit row count for tables with no columns.
    pub fn with_row_count(
        name: impl Into<String>,
        columns: Vec<Column>,
        row_count: usize,
    ) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
            if c.values.len() != row_count {
                return Err(TableError::LengthMismatch {
                    column: c.name.clone(),
                    expected: row_count,
                    found: c.values.len(),
                });
            }
        }
        Ok(Table {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Case-insensitive column lookup, matching SQL identifier rules.
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .or_else(|| self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name)))
    }

    pub fn row(&self, index: usize) -> Vec<&Cell> {
        self.columns.iter().map(|c| &c.values[index]).collect()
    }

    pub fn renamed(&self, name: impl Into<String>) -> Table {
        Table {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Returns a copy with `column` appended.
    pub fn with_column(&self, column: Column) -> Result<Table, TableError> {
        if self.column(&column.name).is_some() {
            return Err(TableError::DuplicateColumn(column.name));
        }
        let mut columns = self.columns.clone();
        columns.push(column);
        Table::with_row_count(self.name.clone(), columns, self.row_count)
    }

    pub fn project(&self, names: &[&str]) -> Result<Table, TableError> {
        let columns = names
            .iter()
            .map(|n| {
                self.column(n)
                    .cloned()
                    .ok_or_else(|| TableError::UnknownColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Table::with_row_count(self.name.clone(), columns, self.row_count)
    }

    pub fn render_for_prompt(&self, row_limit: usize) -> String {
        render_for_prompt(self, row_limit)
    }

    /// Writes the table as delimited text with a header row.
    pub fn write_delimited<W: Write>(&self, writer: W, delimiter: u8) -> Result<(), TableError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))
            .map_err(|e| TableError::Format(e.to_string()))?;
        for i in 0..self.row_count {
            w.write_record(self.columns.iter().map(|c| c.values[i].to_field()))
                .map_err(|e| TableError::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| TableError::Format(e.to_string()))
    }

    pub fn to_delimited_string(&self, delimiter: u8) -> String {
        let mut buf = Vec::new();
        self.write_delimited(&mut buf, delimiter)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("cells are valid UTF-8")
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub null_tokens: Vec<String>,
    pub name: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            has_header: true,
            null_tokens: DEFAULT_NULL_TOKENS.iter().map(|s| s.to_string()).collect(),
            name: "table".to_string(),
        }
    }
}

impl LoadOptions {
    pub fn named(name: impl Into<String>) -> Self {
        LoadOptions {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn tab_separated(mut self) -> Self {
        self.delimiter = b'\t';
        self
    }
}

/// Loads delimited text into a table, inferring one type per column.
pub fn load_table<R: Read>(source: R, options: &LoadOptions) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(source);
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TableError::Format(e.to_string()))?;
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    // A lone empty line is not a header.
    records.retain(|r| !(r.len() == 1 && r[0].trim().is_empty()));
    if records.is_empty() {
        return Err(TableError::EmptyInput);
    }
    let header: Vec<String> = if options.has_header {
        records.remove(0)
    } else {
        (1..=records[0].len()).map(|i| format!("col_{i}")).collect()
    };
    let width = header.len();
    for (i, r) in records.iter().enumerate() {
        if r.len() != width {
            return Err(TableError::RaggedRow {
                record: i + 1 + usize::from(options.has_header),
                expected: width,
                found: r.len(),
            });
        }
    }
    let names = dedupe_exact(&header);
    let columns = names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let raw: Vec<String> = records.iter().map(|r| r[j].clone()).collect();
            Column::from_raw(name, &raw, &options.null_tokens)
        })
        .collect();
    Table::with_row_count(options.name.clone(), columns, records.len())
}

fn dedupe_exact(header: &[String]) -> Vec<String> {
    let mut used: HashSet<String> = HashSet::new();
    header
        .iter()
        .map(|h| {
            let h = h.trim().to_string();
            if used.insert(h.clone()) {
                return h;
            }
            let mut k = 2;
            loop {
                let cand = format!("{h}_{k}");
                if used.insert(cand.clone()) {
                    return cand;
                }
                k += 1;
            }
        })
        .collect()
}

/// Record of column (and table) renames made by [`sanitize_schema`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameMap {
    pub entries: Vec<(String, String)>,
}

impl RenameMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sanitized<'a>(&'a self, original: &'a str) -> &'a str {
        self.entries
            .iter()
            .find(|(o, _)| o == original)
            .map_or(original, |(_, s)| s.as_str())
    }

    pub fn original<'a>(&'a self, sanitized: &'a str) -> &'a str {
        self.entries
            .iter()
            .find(|(_, s)| s == sanitized)
            .map_or(sanitized, |(o, _)| o.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SanitizeOptions {
    pub reserved_words: Vec<String>,
}

impl Default for SanitizeOptions {
    fn default() -> Self {
        SanitizeOptions {
            reserved_words: RESERVED_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn is_clean_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn base_identifier(name: &str, opts: &SanitizeOptions) -> String {
    let reserved = |s: &str| opts.reserved_words.iter().any(|w| w.eq_ignore_ascii_case(s));
    if is_clean_identifier(name) && !reserved(name) {
        return name.to_string();
    }
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c);
        } else if c == '_' {
            out.push('_');
            pending_sep = false;
        } else {
            pending_sep = true;
        }
    }
    let out = out.trim_matches('_').to_string();
    let mut out = if out.is_empty() {
        "col".to_string()
    } else if out.starts_with(|c: char| c.is_ascii_digit()) {
        format!("_{out}")
    } else {
        out
    };
    if reserved(&out) {
        out.push_str("_col");
    }
    out
}

/// Rewrites column names and the table name into plain SQL identifiers.
pub fn sanitize_schema(table: &Table) -> (Table, RenameMap) {
    sanitize_schema_with(table, &SanitizeOptions::default())
}

pub fn sanitize_schema_with(table: &Table, opts: &SanitizeOptions) -> (Table, RenameMap) {
    let bases: Vec<String> = table
        .columns
        .iter()
        .map(|c| base_identifier(&c.name, opts))
        .collect();
    let lower: Vec<String> = bases.iter().map(|b| b.to_ascii_lowercase()).collect();
    let mut used: HashSet<String> = HashSet::new();
    let mut names = vec![String::new(); bases.len()];
    // Names unique among the bases keep their spelling; duplicates are
    // suffixed afterwards so they can never steal a unique name.
    for (i, b) in bases.iter().enumerate() {
        if lower.iter().filter(|l| **l == lower[i]).count() == 1 {
            used.insert(lower[i].clone());
            names[i] = b.clone();
        }
    }
    for (i, b) in bases.iter().enumerate() {
        if !names[i].is_empty() {
            continue;
        }
        if used.insert(lower[i].clone()) {
            names[i] = b.clone();
            continue;
        }
        let mut k = 2;
        loop {
            let cand = format!("{b}_{k}");
            if used.insert(cand.to_ascii_lowercase()) {
                names[i] = cand;
                break;
            }
            k += 1;
        }
    }
    let mut map = RenameMap::default();
    let columns = table
        .columns
        .iter()
        .zip(names)
        .map(|(c, n)| {
            if n != c.name {
                map.entries.push((c.name.clone(), n.clone()));
            }
            Column::new(n, c.declared_type, c.values.clone())
        })
        .collect();
    let name = base_identifier(&table.name, opts);
    let out = Table::with_row_count(name, columns, table.row_count)
        .expect("sanitized names are unique and lengths unchanged");
    (out, map)
}

pub fn project_columns(table: &Table, names: &[&str]) -> Result<Table, TableError> {
    table.project(names)
}

/// Renders a dataframe-style grid: a header line, one line per shown row
/// with a leading row index, and an elision line when rows were cut.
pub fn render_for_prompt(table: &Table, row_limit: usize) -> String {
    let shown = table.row_count.min(row_limit);
    let index_width = shown.saturating_sub(1).to_string().len();
    let cells: Vec<Vec<String>> = table
        .columns
        .iter()
        .map(|c| c.values[..shown].iter().map(Cell::to_prompt_text).collect())
        .collect();
    let widths: Vec<usize> = table
        .columns
        .iter()
        .zip(&cells)
        .map(|(c, vals)| {
            vals.iter()
                .map(|v| v.chars().count())
                .chain(std::iter::once(c.name.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut lines = Vec::with_capacity(shown + 2);
    let mut header = " ".repeat(index_width);
    for (c, w) in table.columns.iter().zip(&widths) {
        header.push_str("  ");
        header.push_str(&format!("{:>w$}", c.name, w = w));
    }
    lines.push(header.trim_end().to_string());
    for i in 0..shown {
        let mut line = format!("{:<w$}", i, w = index_width);
        for (vals, w) in cells.iter().zip(&widths) {
            line.push_str("  ");
            line.push_str(&format!("{:>w$}", vals[i], w = w));
        }
        lines.push(line.trim_end().to_string());
    }
    if shown < table.row_count {
        lines.push(format!("... [{} more rows]", table.row_count - shown));
    }
    lines.join("\n")
}
