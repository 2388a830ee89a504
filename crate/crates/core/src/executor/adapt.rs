//! MySQL-flavoured SQL to the embedded engine's dialect.
//!
//! Supported rewrites:
//! - backtick identifiers become double-quoted
//! - `SUBSTRING`, `LCASE`, `UCASE`, `CHAR_LENGTH`, `IF` calls are renamed
//! - `CAST(x AS SIGNED|UNSIGNED|DECIMAL(p,s)|DOUBLE|FLOAT|CHAR(n)|VARCHAR(n))`
//!   targets become `INTEGER`, `REAL` or `TEXT`
//! - `CREATE TABLE x SELECT ..` and `CREATE TABLE x AS (SELECT ..)` become
//!   `CREATE TABLE x AS SELECT ..`
//!
//! Everything else passes through untouched; `CEIL`, `FLOOR`, `POWER`,
//! `SQRT`, `REGEXP`, `LOCATE`, `YEAR`, `MONTH` and `DAY` are provided by the
//! engine as functions.

use crate::plan::sql::{join_tokens, tokenize, TokKind, Token};

const FUNCTION_RENAMES: &[(&str, &str)] = &[
    ("substring", "SUBSTR"),
    ("lcase", "LOWER"),
    ("ucase", "UPPER"),
    ("char_length", "LENGTH"),
    ("character_length", "LENGTH"),
    ("if", "IIF"),
];

fn cast_target(word: &str) -> Option<&'static str> {
    match word.to_ascii_lowercase().as_str() {
        "signed" | "unsigned" | "int" | "bigint" => Some("INTEGER"),
        "decimal" | "double" | "float" | "numeric" => Some("REAL"),
        "char" | "varchar" | "nchar" => Some("TEXT"),
        _ => None,
    }
}

fn next_sig(tokens: &[Token], from: usize) -> Option<usize> {
    (from..tokens.len()).find(|&i| !tokens[i].is_trivia())
}

fn matching_paren(tokens: &[Token], open: usize) -> Option<usize> {
    let mut depth = 0;
    for (i, t) in tokens.iter().enumerate().skip(open) {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn word(text: &str) -> Token {
    Token {
        kind: TokKind::Word,
        text: text.to_string(),
    }
}

fn adapt_tokens(mut tokens: Vec<Token>) -> Vec<Token> {
    // Quoting and function renames.
    for i in 0..tokens.len() {
        match tokens[i].kind {
            TokKind::QuotedIdent if tokens[i].text.starts_with('`') => {
                let inner = &tokens[i].text[1..tokens[i].text.len().saturating_sub(1).max(1)];
                tokens[i].text = format!("\"{}\"", inner.replace('"', "\"\""));
            }
            TokKind::Word => {
                let is_call = next_sig(&tokens, i + 1).is_some_and(|j| tokens[j].is_punct("("));
                if is_call {
                    if let Some((_, to)) = FUNCTION_RENAMES.iter().find(|(f, _)| tokens[i].text.eq_ignore_ascii_case(f)) {
                        tokens[i].text = to.to_string();
                    }
                }
            }
            _ => {}
        }
    }
    // CAST targets.
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i].is_word("cast") {
            if let Some(open) = next_sig(&tokens, i + 1).filter(|&j| tokens[j].is_punct("(")) {
                if let Some(close) = matching_paren(&tokens, open) {
                    // find the top-level AS inside
                    let mut depth = 0;
                    let mut as_at = None;
                    for (k, t) in tokens.iter().enumerate().take(close).skip(open + 1) {
                        if t.is_punct("(") {
                            depth += 1;
                        } else if t.is_punct(")") {
                            depth -= 1;
                        } else if depth == 0 && t.is_word("as") {
                            as_at = Some(k);
                        }
                    }
                    if let Some(a) = as_at {
                        if let Some(tw) = next_sig(&tokens, a + 1).filter(|&t| t < close) {
                            if let Some(target) = cast_target(&tokens[tw].text) {
                                let mut repl = vec![word(target)];
                                repl.insert(0, Token { kind: TokKind::Space, text: " ".into() });
                                tokens.splice(a + 1..close, repl);
                            }
                        }
                    }
                }
            }
        }
        i += 1;
    }
    // CREATE TABLE x [AS] (SELECT ...)
    let sig: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].is_trivia()).collect();
    if sig.len() >= 4 && tokens[sig[0]].is_word("create") {
        let mut k = 1;
        while k < sig.len() && (tokens[sig[k]].is_word("temp") || tokens[sig[k]].is_word("temporary")) {
            k += 1;
        }
        if k < sig.len() && tokens[sig[k]].is_word("table") {
            k += 1;
            while k < sig.len() && ["if", "not", "exists"].iter().any(|w| tokens[sig[k]].is_word(w)) {
                k += 1;
            }
            let after_name = k + 1;
            if let Some(&p) = sig.get(after_name) {
                let is_select = |t: &Token| t.is_word("select") || t.is_word("with");
                if is_select(&tokens[p]) {
                    tokens.insert(p, word("AS "));
                } else if tokens[p].is_word("as") {
                    if let Some(&q) = sig.get(after_name + 1) {
                        if tokens[q].is_punct("(") && sig.get(after_name + 2).is_some_and(|&r| is_select(&tokens[r])) {
                            if let Some(close) = matching_paren(&tokens, q) {
                                if next_sig(&tokens, close + 1).is_none() {
                                    tokens.remove(close);
                                    tokens.remove(q);
                                }
                            }
                        }
                    }
                } else if tokens[p].is_punct("(") && sig.get(after_name + 1).is_some_and(|&r| is_select(&tokens[r])) {
                    if let Some(close) = matching_paren(&tokens, p) {
                        if next_sig(&tokens, close + 1).is_none() {
                            tokens.remove(close);
                            tokens[p] = word("AS ");
                        }
                    }
                }
            }
        }
    }
    tokens
}

/// Rewrites one or more statements; statement separators are preserved.
pub fn adapt_sql(sql: &str) -> String {
    let tokens = tokenize(sql);
    let mut out = String::with_capacity(sql.len());
    let mut cur: Vec<Token> = Vec::new();
    for t in tokens {
        if t.is_punct(";") {
            out.push_str(&join_tokens(&adapt_tokens(std::mem::take(&mut cur))));
            out.push(';');
        } else {
            cur.push(t);
        }
    }
    out.push_str(&join_tokens(&adapt_tokens(cur)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backticks_become_double_quotes() {
        assert_eq!(adapt_sql("SELECT `Reg Season` FROM `t`"), "SELECT \"Reg Season\" FROM \"t\"");
    }

    #[test]
    fn function_renames_only_on_calls() {
        assert_eq!(
            adapt_sql("SELECT SUBSTRING(a, 1, 2), IF(a > 1, 'x', 'y'), ucase(b) FROM t"),
            "SELECT SUBSTR(a, 1, 2), IIF(a > 1, 'x', 'y'), UPPER(b) FROM t"
        );
        assert_eq!(adapt_sql("SELECT substring FROM t"), "SELECT substring FROM t");
    }

    #[test]
    fn cast_targets() {
        assert_eq!(adapt_sql("SELECT CAST(a AS SIGNED) FROM t"), "SELECT CAST(a AS INTEGER) FROM t");
        assert_eq!(
            adapt_sql("SELECT CAST(a AS DECIMAL(10, 2)), CAST(b AS CHAR(4)) FROM t"),
            "SELECT CAST(a AS REAL), CAST(b AS TEXT) FROM t"
        );
        assert_eq!(adapt_sql("SELECT CAST(a AS UNSIGNED INTEGER) FROM t"), "SELECT CAST(a AS INTEGER) FROM t");
    }

    #[test]
    fn create_table_forms() {
        assert_eq!(adapt_sql("CREATE TABLE x SELECT * FROM t"), "CREATE TABLE x AS SELECT * FROM t");
        assert_eq!(adapt_sql("CREATE TABLE x AS (SELECT * FROM t);"), "CREATE TABLE x AS SELECT * FROM t;");
        assert_eq!(adapt_sql("CREATE TABLE x (SELECT * FROM t)"), "CREATE TABLE x AS SELECT * FROM t");
        assert_eq!(adapt_sql("CREATE TABLE x (a INT)"), "CREATE TABLE x (a INT)");
    }

    #[test]
    fn unknown_functions_pass_through() {
        let s = "SELECT DATE_FORMAT(d, '%Y') FROM t";
        assert_eq!(adapt_sql(s), s);
    }
}
