use std::sync::OnceLock;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::LlmError;

/// Stable short fingerprint of a rendered prompt.
pub fn fingerprint(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Removes a surrounding markdown code fence, if any.
pub fn strip_code_fences(text: &str) -> String {
    let t = text.trim();
    if !t.starts_with("```") {
        return t.to_string();
    }
    let mut lines: Vec<&str> = t.lines().collect();
    lines.remove(0);
    if lines.last().is_some_and(|l| l.trim_start().starts_with("```")) {
        lines.pop();
    }
    lines.join("\n").trim().to_string()
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['\'', '"', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return s[1..s.len() - 1].trim();
        }
    }
    s
}

/// Splits a `#`-separated model answer into exactly `expected_len` values.
///
/// A list with no `#` at all is also accepted one value per line when the
/// line count matches.
pub fn parse_hash_list(text: &str, expected_len: usize) -> Result<Vec<String>, LlmError> {
    let body = strip_code_fences(text);
    if body.is_empty() {
        return Err(LlmError::EmptyOutput);
    }
    if !body.contains('#') && expected_len > 1 {
        let lines: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.len() == expected_len {
            return Ok(lines.into_iter().map(|l| unquote(l).to_string()).collect());
        }
    }
    let body = body.strip_suffix('#').unwrap_or(&body);
    let values: Vec<String> = body.split('#').map(|v| unquote(v).to_string()).collect();
    if values.len() != expected_len {
        return Err(LlmError::LengthMismatch {
            actual: values.len(),
            expected: expected_len,
        });
    }
    Ok(values)
}

fn row_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[|:.)]\s+").expect("valid regex"))
}

/// Parses one line per row with `width` `#`-separated values on each.
pub fn parse_row_lines(text: &str, rows: usize, width: usize) -> Result<Vec<Vec<String>>, LlmError> {
    let body = strip_code_fences(text);
    if body.is_empty() {
        return Err(LlmError::EmptyOutput);
    }
    let lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != rows {
        return Err(LlmError::LengthMismatch {
            actual: lines.len(),
            expected: rows,
        });
    }
    lines
        .into_iter()
        .map(|line| {
            let line = row_prefix().replace(line, "");
            let line = line.trim().strip_suffix('#').unwrap_or(line.trim());
            let vals: Vec<String> = line.split('#').map(|v| unquote(v).to_string()).collect();
            if vals.len() != width {
                return Err(LlmError::LengthMismatch {
                    actual: vals.len(),
                    expected: width,
                });
            }
            Ok(vals)
        })
        .collect()
}
