//! Embedded SQLite engine holding one run's tables.

use rusqlite::functions::FunctionFlags;
use rusqlite::types::{Value, ValueRef};
use rusqlite::{params_from_iter, Connection};

use super::ExecError;
use crate::table::{infer_type_from_cells, Cell, Column, ColumnType, Table};

pub struct Engine {
    conn: Connection,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Engine")
    }
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn sql_type(t: ColumnType) -> &'static str {
    match t {
        ColumnType::Integer => "INTEGER",
        ColumnType::Real => "REAL",
        ColumnType::Text => "TEXT",
        ColumnType::Date => "DATE",
        ColumnType::Unknown => "",
    }
}

fn to_value(c: &Cell) -> Value {
    match c {
        Cell::Null => Value::Null,
        Cell::Integer(v) => Value::Integer(*v),
        Cell::Real(v) => Value::Real(*v),
        Cell::Text(s) => Value::Text(s.clone()),
        Cell::Date(d) => Value::Text(d.format("%Y-%m-%d").to_string()),
    }
}

fn from_value(v: ValueRef<'_>, date_column: bool) -> Cell {
    match v {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Real(r),
        ValueRef::Text(t) => {
            let s = String::from_utf8_lossy(t).into_owned();
            if date_column {
                if let Ok(d) = chrono::NaiveDate::parse_from_str(&s, "%Y-%m-%d") {
                    return Cell::Date(d);
                }
            }
            Cell::Text(s)
        }
        ValueRef::Blob(b) => Cell::Text(String::from_utf8_lossy(b).into_owned()),
    }
}

fn num_arg(ctx: &rusqlite::functions::Context<'_>, i: usize) -> rusqlite::Result<Option<f64>> {
    Ok(match ctx.get_raw(i) {
        ValueRef::Null => None,
        ValueRef::Integer(v) => Some(v as f64),
        ValueRef::Real(v) => Some(v),
        ValueRef::Text(t) => std::str::from_utf8(t).ok().and_then(|s| s.trim().parse().ok()),
        ValueRef::Blob(_) => None,
    })
}

fn text_arg(ctx: &rusqlite::functions::Context<'_>, i: usize) -> Option<String> {
    match ctx.get_raw(i) {
        ValueRef::Null => None,
        ValueRef::Integer(v) => Some(v.to_string()),
        ValueRef::Real(v) => Some(v.to_string()),
        ValueRef::Text(t) | ValueRef::Blob(t) => Some(String::from_utf8_lossy(t).into_owned()),
    }
}

/// Integral results come back as integers, like MySQL's CEIL/FLOOR.
fn int_or_real(v: f64) -> Value {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::Integer(v as i64)
    } else {
        Value::Real(v)
    }
}

fn register_functions(conn: &Connection) -> rusqlite::Result<()> {
    let flags = FunctionFlags::SQLITE_UTF8 | FunctionFlags::SQLITE_DETERMINISTIC;
    for name in ["ceil", "ceiling"] {
        conn.create_scalar_function(name, 1, flags, |ctx| {
            Ok(num_arg(ctx, 0)?.map_or(Value::Null, |v| int_or_real(v.ceil())))
        })?;
    }
    conn.create_scalar_function("floor", 1, flags, |ctx| {
        Ok(num_arg(ctx, 0)?.map_or(Value::Null, |v| int_or_real(v.floor())))
    })?;
    for name in ["power", "pow"] {
        conn.create_scalar_function(name, 2, flags, |ctx| {
            Ok(match (num_arg(ctx, 0)?, num_arg(ctx, 1)?) {
                (Some(a), Some(b)) => Value::Real(a.powf(b)),
                _ => Value::Null,
            })
        })?;
    }
    conn.create_scalar_function("sqrt", 1, flags, |ctx| {
        Ok(num_arg(ctx, 0)?.filter(|v| *v >= 0.0).map_or(Value::Null, |v| Value::Real(v.sqrt())))
    })?;
    conn.create_scalar_function("regexp", 2, flags, |ctx| {
        let (Some(pat), Some(text)) = (text_arg(ctx, 0), text_arg(ctx, 1)) else {
            return Ok(Value::Null);
        };
        let re = regex::Regex::new(&pat).map_err(|e| rusqlite::Error::UserFunctionError(Box::new(e)))?;
        Ok(Value::Integer(re.is_match(&text) as i64))
    })?;
    conn.create_scalar_function("locate", 2, flags, |ctx| {
        let (Some(needle), Some(hay)) = (text_arg(ctx, 0), text_arg(ctx, 1)) else {
            return Ok(Value::Null);
        };
        Ok(Value::Integer(hay.find(&needle).map_or(0, |p| hay[..p].chars().count() as i64 + 1)))
    })?;
    for (name, range) in [("year", 0..4), ("month", 5..7), ("day", 8..10)] {
        conn.create_scalar_function(name, 1, flags, move |ctx| {
            let Some(s) = text_arg(ctx, 0) else { return Ok(Value::Null) };
            Ok(s.get(range.clone())
                .and_then(|p| p.parse::<i64>().ok())
                .map_or(Value::Null, Value::Integer))
        })?;
    }
    Ok(())
}

impl Engine {
    pub fn new() -> Result<Engine, ExecError> {
        let conn = Connection::open_in_memory().map_err(|e| ExecError::EngineUnavailable(e.to_string()))?;
        register_functions(&conn).map_err(|e| ExecError::EngineUnavailable(e.to_string()))?;
        Ok(Engine { conn })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    /// Creates (or replaces) `name` with the contents of `table`.
    pub fn load(&self, name: &str, table: &Table) -> Result<(), rusqlite::Error> {
        self.drop_table(name)?;
        let defs: Vec<String> = table
            .columns()
            .iter()
            .map(|c| format!("{} {}", quote_ident(&c.name), sql_type(c.declared_type)).trim().to_string())
            .collect();
        let tx = self.conn.unchecked_transaction()?;
        tx.execute(&format!("CREATE TABLE {} ({})", quote_ident(name), defs.join(", ")), [])?;
        if !table.columns().is_empty() {
            let marks = vec!["?"; table.columns().len()].join(", ");
            let mut stmt = tx.prepare(&format!("INSERT INTO {} VALUES ({marks})", quote_ident(name)))?;
            for r in 0..table.row_count() {
                stmt.execute(params_from_iter(table.row(r).into_iter().map(to_value)))?;
            }
        }
        tx.commit()
    }

    pub fn drop_table(&self, name: &str) -> Result<(), rusqlite::Error> {
        self.conn.execute(&format!("DROP TABLE IF EXISTS {}", quote_ident(name)), [])?;
        Ok(())
    }

    /// Actual (stored) spelling of a table name, matched case-insensitively.
    pub fn resolve(&self, name: &str) -> Option<String> {
        self.conn
            .query_row(
                "SELECT name FROM sqlite_master WHERE type IN ('table','view') AND lower(name) = lower(?1)",
                [name],
                |r| r.get(0),
            )
            .ok()
    }

    pub fn exists(&self, name: &str) -> bool {
        self.resolve(name).is_some()
    }

    pub fn tables(&self) -> Vec<String> {
        let Ok(mut stmt) = self.conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name") else {
            return Vec::new();
        };
        stmt.query_map([], |r| r.get(0))
            .map(|rows| rows.filter_map(Result::ok).collect())
            .unwrap_or_default()
    }

    /// Reads a whole table in storage order.
    pub fn read(&self, name: &str) -> Result<Table, rusqlite::Error> {
        let actual = self.resolve(name).unwrap_or_else(|| name.to_string());
        self.query(&format!("SELECT * FROM {}", quote_ident(&actual)), &actual)
    }

    /// Runs a query and returns its result as a table called `name`.
    pub fn query(&self, sql: &str, name: &str) -> Result<Table, rusqlite::Error> {
        let mut stmt = self.conn.prepare(sql)?;
        let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let date_cols: Vec<bool> = stmt
            .columns()
            .iter()
            .map(|c| c.decl_type().is_some_and(|t| t.eq_ignore_ascii_case("DATE")))
            .collect();
        let mut values: Vec<Vec<Cell>> = vec![Vec::new(); names.len()];
        let mut rows = stmt.query([])?;
        let mut count = 0;
        while let Some(row) = rows.next()? {
            for (i, col) in values.iter_mut().enumerate() {
                col.push(from_value(row.get_ref(i)?, date_cols[i]));
            }
            count += 1;
        }
        let mut seen: Vec<String> = Vec::new();
        let columns = names
            .into_iter()
            .zip(values)
            .map(|(n, v)| {
                // Engines allow duplicate result names; tables do not.
                let mut name = n.clone();
                let mut k = 2;
                while seen.iter().any(|s| s == &name) {
                    name = format!("{n}_{k}");
                    k += 1;
                }
                seen.push(name.clone());
                Column::new(name, infer_type_from_cells(&v), v)
            })
            .collect();
        Ok(Table::with_row_count(name, columns, count).expect("names deduplicated and lengths equal"))
    }

    /// Executes one statement. Result rows, if any, are discarded.
    pub fn execute(&self, sql: &str) -> Result<(), rusqlite::Error> {
        let mut stmt = self.conn.prepare(sql)?;
        if stmt.column_count() > 0 {
            let mut rows = stmt.query([])?;
            while rows.next()?.is_some() {}
        } else {
            stmt.raw_execute()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{load_table, LoadOptions};

    #[test]
    fn load_and_read_back() {
        let t = load_table("a,b,c\n1,x,2020-01-02\n2,,2021-03-04\n".as_bytes(), &LoadOptions::named("t")).unwrap();
        let e = Engine::new().unwrap();
        e.load("t", &t).unwrap();
        let back = e.read("T").unwrap();
        assert_eq!(back.columns(), t.columns());
        assert_eq!(back.name(), "t");
    }

    #[test]
    fn mysql_helpers() {
        let e = Engine::new().unwrap();
        let t = e
            .query(
                "SELECT CEIL(1.2) AS c, FLOOR(-1.5) AS f, POWER(2, 3) AS p, 'abc' REGEXP 'b' AS r, \
                 CONCAT('a', 1) AS k, LOCATE('c', 'abc') AS l, YEAR('1953-01-01') AS y",
                "x",
            )
            .unwrap();
        let row: Vec<String> = t.row(0).iter().map(|c| c.to_field()).collect();
        assert_eq!(row, vec!["2", "-2", "8.0", "1", "a1", "3", "1953"]);
    }
}
