//! Lightweight, text-preserving SQL analysis.
//!
//! This is not a parser. It tokenizes, splits statements and recognises the
//! handful of shapes the validator and optimizer reason about; anything else
//! is reported as opaque.

use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Word,
    /// Backtick or bracket quoted identifier.
    QuotedIdent,
    /// Double-quoted text: a string in MySQL, usually an identifier elsewhere.
    DoubleQuoted,
    Str,
    Number,
    Punct,
    Space,
    Comment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
}

impl Token {
    pub fn is_trivia(&self) -> bool {
        matches!(self.kind, TokKind::Space | TokKind::Comment)
    }

    pub fn is_word(&self, w: &str) -> bool {
        self.kind == TokKind::Word && self.text.eq_ignore_ascii_case(w)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokKind::Punct && self.text == p
    }

    /// Identifier value with quoting removed, if this token can name something.
    pub fn ident(&self) -> Option<String> {
        match self.kind {
            TokKind::Word if !is_keyword(&self.text) => Some(self.text.clone()),
            TokKind::QuotedIdent | TokKind::DoubleQuoted => Some(unquote_ident(&self.text)),
            _ => None,
        }
    }
}

pub fn unquote_ident(text: &str) -> String {
    let t = text.trim();
    let inner = if (t.starts_with('`') && t.ends_with('`'))
        || (t.starts_with('"') && t.ends_with('"'))
        || (t.starts_with('[') && t.ends_with(']'))
    {
        if t.len() >= 2 {
            &t[1..t.len() - 1]
        } else {
            t
        }
    } else {
        t
    };
    inner.to_string()
}

/// Splits SQL into tokens whose texts concatenate back to the input.
pub fn tokenize(sql: &str) -> Vec<Token> {
    let chars: Vec<char> = sql.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let push = |out: &mut Vec<Token>, kind, s: &[char]| {
        out.push(Token {
            kind,
            text: s.iter().collect(),
        })
    };
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            push(&mut out, TokKind::Space, &chars[start..i]);
        } else if c == '-' && chars.get(i + 1) == Some(&'-') || c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            push(&mut out, TokKind::Comment, &chars[start..i]);
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
            push(&mut out, TokKind::Comment, &chars[start..i]);
        } else if c == '\'' || c == '"' || c == '`' {
            i += 1;
            while i < chars.len() {
                if chars[i] == c {
                    // Doubled quote is an escaped quote.
                    if chars.get(i + 1) == Some(&c) {
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                if chars[i] == '\\' && c == '\'' {
                    i += 1;
                }
                i += 1;
            }
            i = i.min(chars.len());
            let kind = match c {
                '\'' => TokKind::Str,
                '"' => TokKind::DoubleQuoted,
                _ => TokKind::QuotedIdent,
            };
            push(&mut out, kind, &chars[start..i]);
        } else if c == '[' {
            while i < chars.len() && chars[i] != ']' {
                i += 1;
            }
            i = (i + 1).min(chars.len());
            push(&mut out, TokKind::QuotedIdent, &chars[start..i]);
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                i += 1;
            }
            // `1936_` style tokens are identifiers in practice; keep them as words.
            let text: String = chars[start..i].iter().collect();
            let kind = if text.chars().all(|ch| ch.is_ascii_digit() || ch == '.') {
                TokKind::Number
            } else {
                TokKind::Word
            };
            out.push(Token { kind, text });
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            push(&mut out, TokKind::Word, &chars[start..i]);
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if ["<=", ">=", "<>", "!=", "||", "=="].contains(&two.as_str()) {
                i += 2;
            } else {
                i += 1;
            }
            push(&mut out, TokKind::Punct, &chars[start..i]);
        }
    }
    out
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// Reserved words that never name a column or table. Function names are
/// not listed; a word followed by `(` is treated as a call instead.
const KEYWORDS: &[&str] = &[
    "add", "all", "alter", "and", "any", "as", "asc", "between", "by", "case", "cast", "collate",
    "create", "cross", "current_date", "current_time", "current_timestamp", "decimal", "delete",
    "desc", "distinct", "double", "drop", "else", "end", "escape", "except", "exists", "false",
    "float", "from", "full", "glob", "group", "having", "if", "in", "inner", "insert", "int",
    "integer", "intersect", "into", "is", "isnull", "join", "left", "like", "limit", "natural",
    "not", "notnull", "null", "numeric", "offset", "on", "or", "order", "outer", "over",
    "partition", "recursive", "regexp", "right", "select", "set", "signed", "table", "temp",
    "temporary", "then", "true", "union", "unsigned", "update", "using", "values", "varchar",
    "when", "where", "window", "with",
];

pub fn is_keyword(word: &str) -> bool {
    let w = word.to_ascii_lowercase();
    KEYWORDS.contains(&w.as_str())
}

/// Words that end a FROM-list or start a new clause.
const CLAUSE_WORDS: &[&str] = &[
    "where", "group", "having", "order", "limit", "union", "except", "intersect", "on", "using",
    "join", "inner", "left", "right", "full", "cross", "natural", "outer", "window", "offset", "set",
    "values", "select",
];

fn significant(tokens: &[Token]) -> Vec<(usize, &Token)> {
    tokens.iter().enumerate().filter(|(_, t)| !t.is_trivia()).collect()
}

/// Splits on top-level `;`. Empty statements are dropped.
pub fn split_statements(sql: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for t in tokenize(sql) {
        if t.is_punct(";") {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        } else {
            cur.push_str(&t.text);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Byte offset just past the last top-level `;`, if any.
pub fn last_semicolon_end(sql: &str) -> Option<usize> {
    let mut pos = 0;
    let mut last = None;
    for t in tokenize(sql) {
        pos += t.text.len();
        if t.is_punct(";") {
            last = Some(pos);
        }
    }
    last
}

fn cte_names(sig: &[(usize, &Token)]) -> HashSet<String> {
    let mut names = HashSet::new();
    if !sig.first().is_some_and(|(_, t)| t.is_word("with")) {
        return names;
    }
    let mut depth = 0i32;
    let mut expect_name = true;
    for (k, (_, t)) in sig.iter().enumerate().skip(1) {
        if t.is_word("recursive") {
            continue;
        }
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        } else if depth == 0 {
            if t.is_punct(",") {
                expect_name = true;
            } else if expect_name {
                if let Some(n) = t.ident() {
                    names.insert(n.to_ascii_lowercase());
                }
                expect_name = false;
            } else if t.is_word("select") && sig.get(k.wrapping_sub(1)).is_some_and(|(_, p)| !p.is_word("as")) {
                break;
            }
        }
    }
    names
}

/// Tables read or written by a statement, CTE names excluded, in order of
/// appearance, deduplicated case-insensitively.
pub fn referenced_tables(stmt: &str) -> Vec<String> {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let ctes = cte_names(&sig);
    let mut out: Vec<String> = Vec::new();
    let add = |name: String, out: &mut Vec<String>| {
        let low = name.to_ascii_lowercase();
        if !ctes.contains(&low) && !out.iter().any(|o| o.eq_ignore_ascii_case(&name)) {
            out.push(name);
        }
    };
    let mut k = 0;
    while k < sig.len() {
        let t = sig[k].1;
        let takes_table = t.is_word("from") || t.is_word("join") || t.is_word("into") || t.is_word("update");
        let is_table_kw = t.is_word("table") && k > 0 && (sig[k - 1].1.is_word("alter") || sig[k - 1].1.is_word("drop"));
        if takes_table || is_table_kw {
            let mut j = k + 1;
            // DROP TABLE IF EXISTS x
            while j < sig.len() && (sig[j].1.is_word("if") || sig[j].1.is_word("exists") || sig[j].1.is_word("not")) {
                j += 1;
            }
            while let Some((_, nt)) = sig.get(j) {
                if nt.is_punct("(") {
                    break;
                }
                let Some(name) = nt.ident() else { break };
                // schema-qualified names: keep the last part
                let mut name = name;
                while sig.get(j + 1).is_some_and(|(_, p)| p.is_punct(".")) {
                    if let Some(n2) = sig.get(j + 2).and_then(|(_, x)| x.ident()) {
                        name = n2;
                        j += 2;
                    } else {
                        break;
                    }
                }
                add(name, &mut out);
                j += 1;
                if !t.is_word("from") {
                    break;
                }
                // optional alias, then a comma continues the FROM list
                if sig.get(j).is_some_and(|(_, a)| a.is_word("as")) {
                    j += 1;
                }
                if sig.get(j).is_some_and(|(_, a)| a.ident().is_some() && !is_clause_word(&a.text)) {
                    j += 1;
                }
                if sig.get(j).is_some_and(|(_, c)| c.is_punct(",")) {
                    j += 1;
                    continue;
                }
                break;
            }
            k = j;
            continue;
        }
        k += 1;
    }
    out
}

fn is_clause_word(w: &str) -> bool {
    CLAUSE_WORDS.contains(&w.to_ascii_lowercase().as_str())
}

/// Name created by `CREATE [TEMP] TABLE [IF NOT EXISTS] name`, if any.
pub fn created_table(stmt: &str) -> Option<String> {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let mut k = 0;
    if !sig.first()?.1.is_word("create") {
        return None;
    }
    k += 1;
    while sig.get(k).is_some_and(|(_, t)| t.is_word("temp") || t.is_word("temporary")) {
        k += 1;
    }
    if !sig.get(k)?.1.is_word("table") {
        return None;
    }
    k += 1;
    while sig.get(k).is_some_and(|(_, t)| t.is_word("if") || t.is_word("not") || t.is_word("exists")) {
        k += 1;
    }
    sig.get(k)?.1.ident()
}

/// Last table created by any statement of `sql`.
pub fn last_created_table(sql: &str) -> Option<String> {
    split_statements(sql).iter().rev().find_map(|s| created_table(s))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

/// Names introduced with `AS` that are not table aliases (output columns,
/// subquery and CTE names).
pub fn output_aliases(stmt: &str) -> HashSet<String> {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let tables = table_aliases(stmt);
    let mut out = HashSet::new();
    for k in 0..sig.len() {
        if sig[k].1.is_word("as") {
            if let Some(n) = sig.get(k + 1).and_then(|(_, t)| t.ident()) {
                let low = n.to_ascii_lowercase();
                if !tables.contains_key(&low) {
                    out.insert(low);
                }
            }
        }
    }
    out
}

/// alias (lowercase) -> table name, including each table under its own name.
pub fn table_aliases(stmt: &str) -> BTreeMap<String, String> {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let mut out = BTreeMap::new();
    for k in 0..sig.len() {
        let t = sig[k].1;
        if !(t.is_word("from") || t.is_word("join") || (t.is_punct(",") && in_from_list(&sig, k))) {
            continue;
        }
        let Some(table) = sig.get(k + 1).and_then(|(_, x)| x.ident()) else { continue };
        out.insert(table.to_ascii_lowercase(), table.clone());
        let mut j = k + 2;
        if sig.get(j).is_some_and(|(_, a)| a.is_word("as")) {
            j += 1;
        }
        if let Some((_, a)) = sig.get(j) {
            if let Some(alias) = a.ident() {
                if !is_clause_word(&a.text) {
                    out.insert(alias.to_ascii_lowercase(), table);
                }
            }
        }
    }
    // Subquery aliases: `) AS x` or `) x`
    for k in 0..sig.len() {
        if sig[k].1.is_punct(")") && opens_subquery(&sig, k) {
            let mut j = k + 1;
            if sig.get(j).is_some_and(|(_, a)| a.is_word("as")) {
                j += 1;
            }
            if let Some(alias) = sig.get(j).and_then(|(_, a)| a.ident()) {
                if !is_clause_word(&alias) {
                    out.entry(alias.to_ascii_lowercase()).or_insert_with(|| alias.clone());
                }
            }
        }
    }
    out
}

/// Whether the `)` at `close` ends a parenthesised SELECT.
fn opens_subquery(sig: &[(usize, &Token)], close: usize) -> bool {
    let mut depth = 0i32;
    for k in (0..close).rev() {
        let t = sig[k].1;
        if t.is_punct(")") {
            depth += 1;
        } else if t.is_punct("(") {
            if depth == 0 {
                return sig.get(k + 1).is_some_and(|(_, n)| n.is_word("select") || n.is_word("with"));
            }
            depth -= 1;
        }
    }
    false
}

fn in_from_list(sig: &[(usize, &Token)], comma: usize) -> bool {
    let mut depth = 0i32;
    for k in (0..comma).rev() {
        let t = sig[k].1;
        if t.is_punct(")") {
            depth += 1;
        } else if t.is_punct("(") {
            if depth == 0 {
                return false;
            }
            depth -= 1;
        } else if depth == 0 {
            if t.is_word("from") {
                return true;
            }
            if t.is_word("select") || t.is_word("where") || is_clause_word(&t.text) && t.kind == TokKind::Word {
                return false;
            }
        }
    }
    false
}

/// Column identifiers a statement reads. Function names, table names and
/// aliases, keywords, literals, CTE names and names right after `AS` are
/// excluded; later uses of output aliases (e.g. in ORDER BY) are not, so
/// check results against [`output_aliases`] too. Double-quoted text counts
/// as a string literal.
pub fn column_refs(stmt: &str) -> Vec<ColumnRef> {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let tables: HashSet<String> = referenced_tables(stmt).iter().map(|t| t.to_ascii_lowercase()).collect();
    let aliases = table_aliases(stmt);
    let ctes = cte_names(&sig);
    let created = created_table(stmt).map(|c| c.to_ascii_lowercase());
    let mut out: Vec<ColumnRef> = Vec::new();
    let mut k = 0;
    while k < sig.len() {
        let t = sig[k].1;
        let name = match t.kind {
            TokKind::Word if !is_keyword(&t.text) => t.text.clone(),
            TokKind::QuotedIdent => unquote_ident(&t.text),
            _ => {
                k += 1;
                continue;
            }
        };
        let prev = k.checked_sub(1).map(|p| sig[p].1);
        let next = sig.get(k + 1).map(|(_, n)| *n);
        if next.is_some_and(|n| n.is_punct("(")) && t.kind == TokKind::Word {
            k += 1;
            continue;
        }
        if prev.is_some_and(|p| p.is_word("as")) {
            k += 1;
            continue;
        }
        // qualifier.column
        if next.is_some_and(|n| n.is_punct(".")) {
            if let Some(col) = sig.get(k + 2).and_then(|(_, c)| match c.kind {
                TokKind::Word => Some(c.text.clone()),
                TokKind::QuotedIdent | TokKind::DoubleQuoted => Some(unquote_ident(&c.text)),
                _ => None,
            }) {
                out.push(ColumnRef {
                    qualifier: Some(name),
                    name: col,
                });
            }
            k += 3;
            continue;
        }
        let low = name.to_ascii_lowercase();
        if tables.contains(&low)
            || aliases.contains_key(&low)
            || ctes.contains(&low)
            || created.as_deref() == Some(low.as_str())
        {
            k += 1;
            continue;
        }
        let r = ColumnRef {
            qualifier: None,
            name,
        };
        if !out.contains(&r) {
            out.push(r);
        }
        k += 1;
    }
    out
}

/// Every identifier-like token (words, quoted identifiers and double-quoted
/// text), lowercased. Used as a conservative "mentions" test.
pub fn mentioned_names(sql: &str) -> HashSet<String> {
    tokenize(sql)
        .into_iter()
        .filter_map(|t| match t.kind {
            TokKind::Word => Some(t.text.to_ascii_lowercase()),
            TokKind::QuotedIdent | TokKind::DoubleQuoted => Some(unquote_ident(&t.text).to_ascii_lowercase()),
            _ => None,
        })
        .collect()
}

/// Renames table identifiers (case-insensitive); column names after a `.`
/// and function names are left alone.
pub fn rename_tables(sql: &str, map: &BTreeMap<String, String>) -> String {
    if map.is_empty() {
        return sql.to_string();
    }
    let lower: BTreeMap<String, &String> = map.iter().map(|(k, v)| (k.to_ascii_lowercase(), v)).collect();
    let tokens = tokenize(sql);
    let mut out = String::with_capacity(sql.len());
    let mut prev_sig: Option<&Token> = None;
    for (i, t) in tokens.iter().enumerate() {
        let after_dot = prev_sig.is_some_and(|p| p.is_punct("."));
        let is_call = tokens[i + 1..].iter().find(|n| !n.is_trivia()).is_some_and(|n| n.is_punct("("));
        let replacement = match t.kind {
            TokKind::Word | TokKind::QuotedIdent if !after_dot && !(is_call && t.kind == TokKind::Word) => {
                let key = unquote_ident(&t.text).to_ascii_lowercase();
                lower.get(&key).map(|v| {
                    if t.kind == TokKind::QuotedIdent {
                        let q = t.text.chars().next().unwrap_or('`');
                        let close = if q == '[' { ']' } else { q };
                        format!("{q}{v}{close}")
                    } else {
                        (*v).clone()
                    }
                })
            }
            _ => None,
        };
        out.push_str(replacement.as_deref().unwrap_or(&t.text));
        if !t.is_trivia() {
            prev_sig = Some(t);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementKind {
    /// `CREATE TABLE name AS <select>` (also accepts the MySQL form without AS).
    CreateTableAs { name: String, select: String },
    Select,
    Other,
}

pub fn classify(stmt: &str) -> StatementKind {
    let tokens = tokenize(stmt);
    let sig = significant(&tokens);
    let Some((_, first)) = sig.first() else {
        return StatementKind::Other;
    };
    if first.is_word("select") || first.is_word("with") {
        return StatementKind::Select;
    }
    if first.is_word("create") {
        if let Some(name) = created_table(stmt) {
            // find the SELECT / WITH that starts the query
            let pos = sig.iter().position(|(_, t)| t.is_word("select") || t.is_word("with"));
            if let Some(p) = pos {
                let before = &sig[..p];
                if before.iter().any(|(_, t)| t.is_punct("(")) {
                    return StatementKind::Other;
                }
                let tok_index = sig[p].0;
                let mut select = join_tokens(&tokens[tok_index..]);
                // `CREATE TABLE x AS (SELECT ...)` is covered by the paren check above.
                select = select.trim().to_string();
                return StatementKind::CreateTableAs { name, select };
            }
        }
    }
    StatementKind::Other
}

/// A single-level SELECT split into its clauses. Clause texts exclude the
/// clause keyword.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectParts {
    pub distinct: bool,
    pub projection: String,
    pub from: String,
    pub where_: Option<String>,
    pub group_by: Option<String>,
    pub having: Option<String>,
    pub order_by: Option<String>,
    pub limit: Option<String>,
}

impl SelectParts {
    pub fn is_star(&self) -> bool {
        self.projection.trim() == "*"
    }

    /// Single table in FROM (no joins, no subquery): `(name, alias)`.
    pub fn single_source(&self) -> Option<(String, Option<String>)> {
        let tokens = tokenize(&self.from);
        let sig: Vec<&Token> = tokens.iter().filter(|t| !t.is_trivia()).collect();
        match sig.as_slice() {
            [t] => Some((t.ident()?, None)),
            [t, a] => Some((t.ident()?, Some(a.ident()?))),
            [t, as_, a] if as_.is_word("as") => Some((t.ident()?, Some(a.ident()?))),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::from("SELECT ");
        if self.distinct {
            s.push_str("DISTINCT ");
        }
        s.push_str(self.projection.trim());
        s.push_str(" FROM ");
        s.push_str(self.from.trim());
        for (kw, part) in [
            ("WHERE", &self.where_),
            ("GROUP BY", &self.group_by),
            ("HAVING", &self.having),
            ("ORDER BY", &self.order_by),
            ("LIMIT", &self.limit),
        ] {
            if let Some(p) = part {
                s.push(' ');
                s.push_str(kw);
                s.push(' ');
                s.push_str(p.trim());
            }
        }
        s
    }
}

/// Splits a plain SELECT (no CTE, no set operation, no window clause) into
/// its clauses at parenthesis depth zero.
pub fn select_parts(select: &str) -> Option<SelectParts> {
    let tokens = tokenize(select.trim().trim_end_matches(';'));
    let sig = significant(&tokens);
    if !sig.first()?.1.is_word("select") {
        return None;
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Part {
        Proj,
        From,
        Where,
        Group,
        Having,
        Order,
        Limit,
    }
    let mut bounds: Vec<(Part, usize, usize)> = Vec::new(); // part, token start (after keyword)
    let mut depth = 0i32;
    let mut distinct = false;
    let mut k = 1;
    if sig.get(1).is_some_and(|(_, t)| t.is_word("distinct")) {
        distinct = true;
        k = 2;
    } else if sig.get(1).is_some_and(|(_, t)| t.is_word("all")) {
        k = 2;
    }
    bounds.push((Part::Proj, sig.get(k)?.0, 0));
    let mut order = 0;
    while k < sig.len() {
        let (idx, t) = sig[k];
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        } else if depth == 0 && t.kind == TokKind::Word {
            let next_by = sig.get(k + 1).is_some_and(|(_, n)| n.is_word("by"));
            let part = match t.text.to_ascii_lowercase().as_str() {
                "from" => Some((Part::From, 1)),
                "where" => Some((Part::Where, 2)),
                "group" if next_by => Some((Part::Group, 3)),
                "having" => Some((Part::Having, 4)),
                "order" if next_by => Some((Part::Order, 5)),
                "limit" => Some((Part::Limit, 6)),
                "union" | "except" | "intersect" | "window" => return None,
                "select" => return None,
                _ => None,
            };
            if let Some((p, rank)) = part {
                if rank <= order {
                    return None;
                }
                order = rank;
                let last = bounds.len() - 1;
                bounds[last].2 = idx;
                let skip = if matches!(p, Part::Group | Part::Order) { 2 } else { 1 };
                let start = sig.get(k + skip).map_or(tokens.len(), |(i, _)| *i);
                bounds.push((p, start, 0));
                k += skip;
                continue;
            }
        }
        k += 1;
    }
    let last = bounds.len() - 1;
    bounds[last].2 = tokens.len();
    let mut parts = SelectParts {
        distinct,
        ..SelectParts::default()
    };
    let mut saw_from = false;
    for (p, s, e) in bounds {
        let text = join_tokens(&tokens[s..e.max(s)]).trim().to_string();
        match p {
            Part::Proj => parts.projection = text,
            Part::From => {
                saw_from = true;
                parts.from = text
            }
            Part::Where => parts.where_ = Some(text),
            Part::Group => parts.group_by = Some(text),
            Part::Having => parts.having = Some(text),
            Part::Order => parts.order_by = Some(text),
            Part::Limit => parts.limit = Some(text),
        }
    }
    if !saw_from {
        return None;
    }
    Some(parts)
}

/// Splits `text` on top-level commas.
pub fn split_top_level_commas(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    for t in tokenize(text) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        }
        if depth == 0 && t.is_punct(",") {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push_str(&t.text);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Output column names of a SELECT given the input schemas, or `None` when
/// they cannot be derived statically. `schemas` is keyed by lowercase table name.
pub fn infer_select_columns(select: &str, schemas: &BTreeMap<String, Vec<String>>) -> Option<Vec<String>> {
    let parts = select_parts(select)?;
    let aliases = table_aliases(&format!("SELECT 1 FROM {}", parts.from));
    let from_tables = referenced_tables(&format!("SELECT 1 FROM {}", parts.from));
    let mut out = Vec::new();
    for item in split_top_level_commas(&parts.projection) {
        let tokens = tokenize(&item);
        let sig: Vec<&Token> = tokens.iter().filter(|t| !t.is_trivia()).collect();
        match sig.as_slice() {
            [s] if s.is_punct("*") => {
                for t in &from_tables {
                    out.extend(schemas.get(&t.to_ascii_lowercase())?.iter().cloned());
                }
            }
            [q, d, s] if d.is_punct(".") && s.is_punct("*") => {
                let table = aliases.get(&q.ident()?.to_ascii_lowercase())?;
                out.extend(schemas.get(&table.to_ascii_lowercase())?.iter().cloned());
            }
            [c] => out.push(c.ident().filter(|_| c.kind != TokKind::DoubleQuoted)?),
            [_, d, c] if d.is_punct(".") => out.push(c.ident()?),
            _ => {
                let n = sig.len();
                let aliased = n >= 3 && sig[n - 2].is_word("as");
                let bare_alias = n >= 2 && sig[n - 1].ident().is_some() && sig[n - 2].is_punct(")");
                if aliased || bare_alias {
                    out.push(sig[n - 1].ident()?);
                } else {
                    return None;
                }
            }
        }
    }
    Some(out)
}
