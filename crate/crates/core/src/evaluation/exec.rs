//! SQL execution against fixture databases.

use std::cmp::Ordering;
use std::path::Path;
use std::sync::Mutex;

use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sql::{parse_sql, Dialect};
use crate::sql::analysis::has_top_level_order_by;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecErrorKind {
    Syntax,
    UnknownObject,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?} error: {message}")]
pub struct ExecError {
    pub kind: ExecErrorKind,
    pub message: String,
}

impl ExecError {
    fn new(kind: ExecErrorKind, message: impl Into<String>) -> Self {
        ExecError {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    /// Integral reals compare equal to the matching integer.
    fn normalized(&self) -> Value {
        match self {
            Value::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => Value::Integer(*r as i64),
            v => v.clone(),
        }
    }

    /// Total order used for multiset comparison.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        let (a, b) = (self.normalized(), other.normalized());
        match a.rank().cmp(&b.rank()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (&a, &b) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Integer(x), Value::Integer(y)) => x.cmp(y),
            (Value::Integer(x), Value::Real(y)) => (*x as f64).total_cmp(y),
            (Value::Real(x), Value::Integer(y)) => x.total_cmp(&(*y as f64)),
            (Value::Real(x), Value::Real(y)) => x.total_cmp(y),
            (Value::Text(x), Value::Text(y)) => x.cmp(y),
            (Value::Blob(x), Value::Blob(y)) => x.cmp(y),
            _ => unreachable!("ranks are equal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// The producing query has a top-level ORDER BY.
    pub ordered: bool,
}

impl ResultTable {
    pub fn arity(&self) -> usize {
        self.column_names.len()
    }
}

pub fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

pub trait ExecBackend: Send + Sync {
    fn execute(&self, sql: &str) -> Result<ResultTable, ExecError>;
}

/// An in-memory SQLite database.
pub struct SqliteDb {
    conn: Mutex<Connection>,
}

fn classify(message: &str) -> ExecErrorKind {
    let m = message.to_lowercase();
    if m.contains("no such table") || m.contains("no such column") || m.contains("no such function") {
        ExecErrorKind::UnknownObject
    } else if m.contains("syntax error") || m.contains("incomplete input") || m.contains("unrecognized token") {
        ExecErrorKind::Syntax
    } else {
        ExecErrorKind::Runtime
    }
}

fn sqlite_err(e: rusqlite::Error) -> ExecError {
    match e {
        rusqlite::Error::MultipleStatement => ExecError::new(ExecErrorKind::Syntax, "more than one statement"),
        e => {
            let msg = e.to_string();
            ExecError::new(classify(&msg), msg)
        }
    }
}

fn is_ordered(sql: &str) -> bool {
    [Dialect::Sqlite, Dialect::Generic]
        .iter()
        .find_map(|d| parse_sql(sql, *d).ok())
        .is_some_and(|ast| has_top_level_order_by(&ast))
}

impl SqliteDb {
    pub fn in_memory() -> Result<Self, EvalError> {
        let conn = Connection::open_in_memory().map_err(|e| EvalError::Fixture(e.to_string()))?;
        Ok(SqliteDb { conn: Mutex::new(conn) })
    }

    /// Runs DDL or DML while building a fixture.
    pub fn execute_batch(&self, sql: &str) -> Result<(), EvalError> {
        self.lock().execute_batch(sql).map_err(|e| EvalError::Fixture(e.to_string()))
    }

    /// Loads `dir/schema.sql`, then `dir/<table>.csv` for each created table
    /// that has one. CSVs have a header row; empty fields load as NULL.
    pub fn load_fixture(dir: &Path) -> Result<Self, EvalError> {
        let db = SqliteDb::in_memory()?;
        let ddl_path = dir.join("schema.sql");
        let ddl = std::fs::read_to_string(&ddl_path)
            .map_err(|e| EvalError::Fixture(format!("{}: {e}", ddl_path.display())))?;
        db.execute_batch(&ddl)?;
        for table in db.table_names()? {
            let csv_path = dir.join(format!("{table}.csv"));
            if csv_path.exists() {
                db.load_csv(&table, &csv_path)?;
            }
        }
        Ok(db)
    }

    pub fn table_names(&self) -> Result<Vec<String>, EvalError> {
        let conn = self.lock();
        let mut stmt = conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name")
            .map_err(|e| EvalError::Fixture(e.to_string()))?;
        let names = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .and_then(|rows| rows.collect::<Result<Vec<_>, _>>())
            .map_err(|e| EvalError::Fixture(e.to_string()));
        names
    }

    pub fn load_csv(&self, table: &str, path: &Path) -> Result<usize, EvalError> {
        let fail = |e: &dyn std::fmt::Display| EvalError::Fixture(format!("{}: {e}", path.display()));
        let mut reader = csv::Reader::from_path(path).map_err(|e| fail(&e))?;
        let headers: Vec<String> = reader.headers().map_err(|e| fail(&e))?.iter().map(str::to_string).collect();
        let cols = headers.iter().map(|h| format!("\"{}\"", h.replace('"', "\"\""))).collect::<Vec<_>>();
        let marks = vec!["?"; headers.len()].join(", ");
        let sql = format!("INSERT INTO \"{table}\" ({}) VALUES ({marks})", cols.join(", "));
        let mut conn = self.lock();
        let tx = conn.transaction().map_err(|e| fail(&e))?;
        let mut n = 0;
        {
            let mut stmt = tx.prepare(&sql).map_err(|e| fail(&e))?;
            for rec in reader.records() {
                let rec = rec.map_err(|e| fail(&e))?;
                let vals: Vec<Option<&str>> = rec.iter().map(|f| (!f.is_empty()).then_some(f)).collect();
                stmt.execute(rusqlite::params_from_iter(vals)).map_err(|e| fail(&e))?;
                n += 1;
            }
        }
        tx.commit().map_err(|e| fail(&e))?;
        Ok(n)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl ExecBackend for SqliteDb {
    fn execute(&self, sql: &str) -> Result<ResultTable, ExecError> {
        let conn = self.lock();
        let mut stmt = conn.prepare(sql.trim().trim_end_matches(';')).map_err(sqlite_err)?;
        if !stmt.readonly() {
            return Err(ExecError::new(ExecErrorKind::Runtime, "statement would modify the database"));
        }
        let column_names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let width = column_names.len();
        let mut rows = Vec::new();
        let mut cursor = stmt.query([]).map_err(sqlite_err)?;
        while let Some(row) = cursor.next().map_err(sqlite_err)? {
            let mut out = Vec::with_capacity(width);
            for i in 0..width {
                out.push(match row.get_ref(i).map_err(sqlite_err)? {
                    ValueRef::Null => Value::Null,
                    ValueRef::Integer(v) => Value::Integer(v),
                    ValueRef::Real(v) => Value::Real(v),
                    ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                    ValueRef::Blob(b) => Value::Blob(b.to_vec()),
                });
            }
            rows.push(out);
        }
        Ok(ResultTable {
            column_names,
            rows,
            ordered: is_ordered(sql),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_one() {
        let db = SqliteDb::in_memory().unwrap();
        let t = db.execute("SELECT 1").unwrap();
        assert_eq!(t.rows, vec![vec![Value::Integer(1)]]);
        assert!(!t.ordered);
    }

    #[test]
    fn error_categories() {
        let db = SqliteDb::in_memory().unwrap();
        assert_eq!(db.execute("SELECT * FROM no_such_table").unwrap_err().kind, ExecErrorKind::UnknownObject);
        assert_eq!(db.execute("SELEC").unwrap_err().kind, ExecErrorKind::Syntax);
        assert_eq!(db.execute("SELECT abs(1, 2)").unwrap_err().kind, ExecErrorKind::Runtime);
        db.execute_batch("CREATE TABLE t (a INTEGER)").unwrap();
        assert_eq!(db.execute("DELETE FROM t").unwrap_err().kind, ExecErrorKind::Runtime);
    }

    #[test]
    fn integral_reals_equal_integers() {
        assert_eq!(Value::Real(3.0).total_cmp(&Value::Integer(3)), Ordering::Equal);
        assert_eq!(Value::Null.total_cmp(&Value::Integer(0)), Ordering::Less);
    }
}
