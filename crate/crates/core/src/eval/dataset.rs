//! Benchmark records: one JSON object per line, or WikiTQ-style TSV.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::table::{load_table, Cell, Column, LoadOptions, Table};

/// Where a record's table lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TableRef {
    Path { table_path: PathBuf },
    Inline { table: InlineTable },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineTable {
    #[serde(default)]
    pub name: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    #[serde(flatten)]
    pub table: TableRef,
    pub question: String,
    /// Gold answer.
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph: Option<String>,
}

fn cell_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl EvalRecord {
    /// Loads the table. Relative paths resolve against `base_dir`.
    pub fn load_table(&self, base_dir: &Path) -> Result<Table, EvalError> {
        let malformed = |why: String| EvalError::DatasetMalformed {
            id: self.id.clone(),
            reason: why,
        };
        match &self.table {
            TableRef::Path { table_path } => {
                let path = if table_path.is_absolute() {
                    table_path.clone()
                } else {
                    base_dir.join(table_path)
                };
                let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table").to_string();
                let f = std::fs::File::open(&path).map_err(|e| malformed(format!("{}: {e}", path.display())))?;
                let mut opts = LoadOptions::named(name);
                if path.extension().is_some_and(|e| e == "tsv") {
                    opts.delimiter = b'\t';
                }
                load_table(f, &opts).map_err(|e| malformed(e.to_string()))
            }
            TableRef::Inline { table } => {
                let mut csv = Vec::new();
                {
                    let mut w = csv::Writer::from_writer(&mut csv);
                    w.write_record(&table.columns).map_err(|e| malformed(e.to_string()))?;
                    for row in &table.rows {
                        if row.len() != table.columns.len() {
                            return Err(malformed(format!("row has {} cells, expected {}", row.len(), table.columns.len())));
                        }
                        w.write_record(row.iter().map(cell_text)).map_err(|e| malformed(e.to_string()))?;
                    }
                    w.flush().map_err(|e| malformed(e.to_string()))?;
                }
                let name = table.name.clone().unwrap_or_else(|| "table".to_string());
                if table.rows.is_empty() {
                    let cols = table
                        .columns
                        .iter()
                        .map(|c| Column::new(c.clone(), crate::table::ColumnType::Text, Vec::<Cell>::new()))
                        .collect();
                    return Table::new(name, cols).map_err(|e| malformed(e.to_string()));
                }
                load_table(csv.as_slice(), &LoadOptions::named(name)).map_err(|e| malformed(e.to_string()))
            }
        }
    }
}

/// Reads line-delimited records. Blank lines are skipped; a bad line or a
/// record without a gold answer is an error naming the record.
pub fn load_jsonl<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| EvalError::DatasetMalformed {
            id: format!("line {}", n + 1),
            reason: e.to_string(),
        })?;
        let id = value
            .get("id")
            .map(cell_text)
            .unwrap_or_else(|| format!("line {}", n + 1));
        let rec: EvalRecord = serde_json::from_value(value).map_err(|e| EvalError::DatasetMalformed {
            id: id.clone(),
            reason: e.to_string(),
        })?;
        if rec.answer.trim().is_empty() {
            return Err(EvalError::DatasetMalformed {
                id,
                reason: "empty gold answer".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl_file(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let f = std::fs::File::open(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    load_jsonl(std::io::BufReader::new(f))
}

/// WikiTQ question files: `id<TAB>utterance<TAB>context<TAB>targetValue`
/// with a header row. `context` is a table path under the dataset root;
/// multiple gold values (`a|b`) are joined with ", ".
pub fn load_wikitq_tsv<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if n == 0 && line.starts_with("id\t") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, question, context, target] = fields[..] else {
            return Err(EvalError::DatasetMalformed {
                id: fields.first().map_or_else(|| format!("line {}", n + 1), |s| s.to_string()),
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        };
        let gold = target.split('|').map(str::trim).collect::<Vec<_>>().join(", ");
        if gold.is_empty() {
            return Err(EvalError::DatasetMalformed {
                id: id.to_string(),
                reason: "empty gold answer".into(),
            });
        }
        out.push(EvalRecord {
            id: id.to_string(),
            table: TableRef::Path {
                table_path: PathBuf::from(context),
            },
            question: question.to_string(),
            answer: gold,
            paragraph: None,
        });
    }
    Ok(out)
}
