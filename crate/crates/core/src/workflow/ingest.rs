//! Query-log input formats.

use serde::{Deserialize, Serialize};

use super::WorkflowError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    /// Semicolon-separated SQL text.
    SqlText,
    /// JSON array of SQL strings.
    JsonStrings,
    /// JSON array of `{question?, query | SQL | sql, db_id?}` objects.
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawStatement {
    pub sql: Option<String>,
    pub question: Option<String>,
    pub db_id: Option<String>,
    pub id: Option<String>,
    pub provenance: Option<super::export::Provenance>,
}

impl RawStatement {
    fn sql(sql: String) -> Self {
        RawStatement {
            sql: Some(sql),
            question: None,
            db_id: None,
            id: None,
            provenance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestFailure {
    /// 0-based statement position in the input.
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub skipped_duplicate: usize,
    pub skipped_non_select: usize,
    pub parse_failures: usize,
    #[serde(default)]
    pub failures: Vec<IngestFailure>,
    /// Items created, in input order.
    #[serde(default)]
    pub item_ids: Vec<String>,
    /// Nested queries split into steps.
    #[serde(default)]
    pub decomposed: usize,
    /// Nested queries that could not be split and are annotated whole.
    #[serde(default)]
    pub annotated_whole: usize,
}

impl IngestReport {
    pub fn total(&self) -> usize {
        self.accepted + self.skipped_duplicate + self.skipped_non_select + self.parse_failures
    }
}

/// Splits on top-level semicolons, ignoring those inside quotes and
/// comments. Fragments holding only comments or whitespace are dropped.
pub fn split_sql_statements(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut content = false;
    let mut i = 0;
    let push = |from: usize, to: usize, content: bool, out: &mut Vec<String>| {
        if content {
            out.push(chars[from..to].iter().collect::<String>().trim().to_string());
        }
    };
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\'' | '"' | '`' => {
                content = true;
                i += 1;
                while i < chars.len() {
                    if chars[i] == c {
                        if i + 1 < chars.len() && chars[i + 1] == c {
                            i += 2;
                            continue;
                        }
                        break;
                    }
                    i += 1;
                }
            }
            '[' => {
                content = true;
                while i < chars.len() && chars[i] != ']' {
                    i += 1;
                }
            }
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                    i += 1;
                }
                i += 1;
            }
            ';' => {
                push(start, i, content, &mut out);
                start = i + 1;
                content = false;
            }
            c if !c.is_whitespace() => content = true,
            _ => {}
        }
        i += 1;
    }
    push(start, chars.len().max(start), content, &mut out);
    out
}

fn field<'a>(obj: &'a serde_json::Map<String, serde_json::Value>, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(|v| v.as_str()))
}

/// Detects the input format and splits it into statements.
pub fn read_log(input: &str) -> Result<(LogFormat, Vec<RawStatement>), WorkflowError> {
    let trimmed = input.trim_start();
    if !trimmed.starts_with('[') {
        let stmts = split_sql_statements(input)
            .into_iter()
            .map(RawStatement::sql)
            .collect();
        return Ok((LogFormat::SqlText, stmts));
    }
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(trimmed).map_err(|e| WorkflowError::InvalidInput(format!("query log JSON: {e}")))?;
    let format = if rows.iter().any(|r| r.is_object()) {
        LogFormat::Benchmark
    } else {
        LogFormat::JsonStrings
    };
    let stmts = rows
        .iter()
        .map(|row| match row {
            serde_json::Value::String(s) => RawStatement::sql(s.clone()),
            serde_json::Value::Object(obj) => RawStatement {
                sql: field(obj, &["query", "SQL", "sql"]).map(str::to_string),
                question: field(obj, &["question"])
                    .map(|q| q.trim().to_string())
                    .filter(|q| !q.is_empty()),
                db_id: field(obj, &["db_id"]).map(str::to_string),
                id: field(obj, &["id"]).map(str::to_string),
                provenance: obj
                    .get("provenance")
                    .and_then(|p| serde_json::from_value(p.clone()).ok()),
            },
            _ => RawStatement {
                sql: None,
                question: None,
                db_id: None,
                id: None,
                provenance: None,
            },
        })
        .collect();
    Ok((format, stmts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_outside_quotes_and_comments() {
        let s = split_sql_statements("-- a; b\nSELECT ';' FROM t; /* x; */ SELECT 2;\n-- trailing");
        assert_eq!(s, vec!["-- a; b\nSELECT ';' FROM t", "/* x; */ SELECT 2"]);
    }

    #[test]
    fn benchmark_json_detected() {
        let (f, rows) = read_log(r#"[{"question": "Q?", "SQL": "SELECT 1", "db_id": "d"}]"#).unwrap();
        assert_eq!(f, LogFormat::Benchmark);
        assert_eq!(rows[0].sql.as_deref(), Some("SELECT 1"));
        assert_eq!(rows[0].question.as_deref(), Some("Q?"));
        let (f, rows) = read_log(r#"["SELECT 1", "SELECT 2"]"#).unwrap();
        assert_eq!(f, LogFormat::JsonStrings);
        assert_eq!(rows.len(), 2);
    }
}
