//! Schema catalogs loaded from DDL text or the JSON table format.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ast::Dialect;
use super::error::{Location, SchemaError};
use super::lexer::{tokenize, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemaFormat {
    DdlText,
    JsonTables,
}

impl SchemaFormat {
    /// JSON when the first non-blank byte opens an object.
    pub fn detect(input: &[u8]) -> SchemaFormat {
        match input.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') => SchemaFormat::JsonTables,
            _ => SchemaFormat::DdlText,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    /// Declared type as written; empty when the DDL gave none.
    pub data_type: String,
    pub nullable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
    pub primary_key: Vec<String>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// `name: col1, col2, ...`; the text embedded for schema retrieval.
    pub fn signature(&self) -> String {
        let cols: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        format!("{}: {}", self.name, cols.join(", "))
    }

    /// `name(col TYPE, ...)` as shown in prompts.
    pub fn describe(&self) -> String {
        let cols: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                if c.data_type.is_empty() {
                    c.name.clone()
                } else {
                    format!("{} {}", c.name, c.data_type)
                }
            })
            .collect();
        format!("{}({})", self.name, cols.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaCatalog {
    pub schema_id: String,
    pub tables: Vec<TableDef>,
    pub source_format: SchemaFormat,
}

impl SchemaCatalog {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen = HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name.to_lowercase()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_lowercase()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Serializes to the external JSON table format.
    pub fn to_json_tables(&self) -> serde_json::Value {
        let tables: Vec<JsonTable> = self
            .tables
            .iter()
            .map(|t| JsonTable {
                name: t.name.clone(),
                columns: t
                    .columns
                    .iter()
                    .map(|c| JsonColumn(c.name.clone(), c.data_type.clone()))
                    .collect(),
                primary_key: t.primary_key.clone(),
            })
            .collect();
        serde_json::json!({ "schema_id": self.schema_id, "tables": tables })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonSchema {
    schema_id: Option<String>,
    tables: Vec<JsonTable>,
}

#[derive(Serialize, Deserialize)]
struct JsonTable {
    name: String,
    columns: Vec<JsonColumn>,
    #[serde(default)]
    primary_key: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonColumn(String, String);

/// Loads a catalog. `schema_id` overrides any id in the input; otherwise
/// JSON input may carry one and DDL falls back to `"default"`.
pub fn load_schema(
    input: &[u8],
    format: SchemaFormat,
    schema_id: Option<&str>,
) -> Result<SchemaCatalog, SchemaError> {
    let text = std::str::from_utf8(input).map_err(|e| SchemaError::Parse {
        location: Location { line: 1, column: 1 },
        message: format!("input is not UTF-8: {e}"),
    })?;
    let catalog = match format {
        SchemaFormat::JsonTables => {
            let parsed: JsonSchema =
                serde_json::from_str(text).map_err(|e| SchemaError::Json(e.to_string()))?;
            let pk_set = |pk: &Vec<String>, col: &str| pk.iter().any(|p| p.eq_ignore_ascii_case(col));
            SchemaCatalog {
                schema_id: schema_id
                    .map(str::to_string)
                    .or(parsed.schema_id)
                    .unwrap_or_else(|| "default".to_string()),
                tables: parsed
                    .tables
                    .into_iter()
                    .map(|t| TableDef {
                        columns: t
                            .columns
                            .iter()
                            .map(|JsonColumn(name, ty)| ColumnDef {
                                name: name.clone(),
                                data_type: ty.clone(),
                                nullable: !pk_set(&t.primary_key, name),
                            })
                            .collect(),
                        name: t.name,
                        primary_key: t.primary_key,
                    })
                    .collect(),
                source_format: SchemaFormat::JsonTables,
            }
        }
        SchemaFormat::DdlText => SchemaCatalog {
            schema_id: schema_id.unwrap_or("default").to_string(),
            tables: parse_ddl(text)?,
            source_format: SchemaFormat::DdlText,
        },
    };
    catalog.validate()?;
    Ok(catalog)
}

fn parse_ddl(text: &str) -> Result<Vec<TableDef>, SchemaError> {
    let tokens = tokenize(text, Dialect::Sqlite).map_err(|e| SchemaError::Parse {
        location: e.location().unwrap_or(Location { line: 1, column: 1 }),
        message: e.to_string(),
    })?;
    let mut ddl = Ddl { tokens, pos: 0 };
    let mut tables = Vec::new();
    loop {
        while ddl.eat_symbol(";") {}
        if ddl.at_eof() {
            break;
        }
        if !ddl.eat_kw("CREATE") {
            return Err(ddl.error("expected CREATE TABLE"));
        }
        while ddl.eat_kw("TEMP") || ddl.eat_kw("TEMPORARY") || ddl.eat_kw("OR") || ddl.eat_kw("REPLACE") {}
        if !ddl.eat_kw("TABLE") {
            // CREATE INDEX / VIEW / ...: not part of the catalog.
            ddl.skip_statement();
            continue;
        }
        if ddl.eat_kw("IF") {
            ddl.expect_kw("NOT")?;
            ddl.expect_kw("EXISTS")?;
        }
        tables.push(ddl.table()?);
        ddl.skip_statement();
    }
    Ok(tables)
}

struct Ddl {
    tokens: Vec<Token>,
    pos: usize,
}

const TABLE_CONSTRAINTS: &[&str] = &["PRIMARY", "FOREIGN", "UNIQUE", "CHECK", "CONSTRAINT"];
const COLUMN_CONSTRAINTS: &[&str] = &[
    "PRIMARY", "NOT", "NULL", "UNIQUE", "CHECK", "DEFAULT", "REFERENCES", "CONSTRAINT", "COLLATE",
    "GENERATED", "AUTOINCREMENT", "AUTO_INCREMENT", "IDENTITY", "AS",
];

impl Ddl {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokenKind::Eof
    }

    fn advance(&mut self) -> Token {
        let t = self.peek().clone();
        if !self.at_eof() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: &str) -> SchemaError {
        SchemaError::Parse {
            location: self.peek().location,
            message: format!("{message}, found {}", self.peek().describe()),
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek().is_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SchemaError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {kw}")))
        }
    }

    fn eat_symbol(&mut self, s: &str) -> bool {
        if self.peek().is_symbol(s) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, s: &str) -> Result<(), SchemaError> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            Err(self.error(&format!("expected \"{s}\"")))
        }
    }

    fn name(&mut self) -> Result<String, SchemaError> {
        match self.peek().kind.clone() {
            TokenKind::Word(w) => {
                self.advance();
                Ok(w)
            }
            TokenKind::QuotedIdent { value, .. } => {
                self.advance();
                Ok(value)
            }
            _ => Err(self.error("expected a name")),
        }
    }

    fn skip_statement(&mut self) {
        while !self.at_eof() && !self.peek().is_symbol(";") {
            self.advance();
        }
    }

    /// Skips to the next `,` or `)` at the current parenthesis depth.
    fn skip_to_item_end(&mut self) -> Result<(), SchemaError> {
        let mut depth = 0usize;
        loop {
            let t = self.peek();
            if t.kind == TokenKind::Eof {
                return Err(self.error("unterminated column list"));
            }
            if depth == 0 && (t.is_symbol(",") || t.is_symbol(")")) {
                return Ok(());
            }
            if t.is_symbol("(") {
                depth += 1;
            } else if t.is_symbol(")") {
                depth -= 1;
            }
            self.advance();
        }
    }

    fn name_list(&mut self) -> Result<Vec<String>, SchemaError> {
        self.expect_symbol("(")?;
        let mut names = Vec::new();
        loop {
            names.push(self.name()?);
            // Column ordering hints inside key lists.
            let _ = self.eat_kw("ASC") || self.eat_kw("DESC");
            if !self.eat_symbol(",") {
                break;
            }
        }
        self.expect_symbol(")")?;
        Ok(names)
    }

    fn table(&mut self) -> Result<TableDef, SchemaError> {
        let mut name = self.name()?;
        while self.eat_symbol(".") {
            name = self.name()?;
        }
        self.expect_symbol("(")?;
        let mut columns: Vec<ColumnDef> = Vec::new();
        let mut primary_key = Vec::new();
        loop {
            if TABLE_CONSTRAINTS.iter().any(|k| self.peek().is_keyword(k)) {
                if self.eat_kw("CONSTRAINT") {
                    self.name()?;
                }
                if self.eat_kw("PRIMARY") {
                    self.expect_kw("KEY")?;
                    primary_key = self.name_list()?;
                }
                self.skip_to_item_end()?;
            } else {
                let col_name = self.name()?;
                let mut type_parts: Vec<String> = Vec::new();
                while let TokenKind::Word(w) = &self.peek().kind {
                    if COLUMN_CONSTRAINTS.iter().any(|k| k.eq_ignore_ascii_case(w)) {
                        break;
                    }
                    type_parts.push(w.clone());
                    self.advance();
                }
                let mut data_type = type_parts.join(" ");
                if self.peek().is_symbol("(") && !data_type.is_empty() {
                    self.advance();
                    let mut args = Vec::new();
                    while !self.peek().is_symbol(")") {
                        if self.at_eof() {
                            return Err(self.error("unterminated type arguments"));
                        }
                        let t = self.advance();
                        if !t.is_symbol(",") {
                            args.push(t.text());
                        }
                    }
                    self.advance();
                    data_type = format!("{data_type}({})", args.join(", "));
                }
                let mut nullable = true;
                let mut is_pk = false;
                let mut depth = 0usize;
                loop {
                    let t = self.peek().clone();
                    if t.kind == TokenKind::Eof {
                        return Err(self.error("unterminated column list"));
                    }
                    if depth == 0 && (t.is_symbol(",") || t.is_symbol(")")) {
                        break;
                    }
                    if t.is_symbol("(") {
                        depth += 1;
                    } else if t.is_symbol(")") {
                        depth -= 1;
                    } else if depth == 0 && t.is_keyword("NOT") {
                        self.advance();
                        if self.peek().is_keyword("NULL") {
                            nullable = false;
                        }
                        continue;
                    } else if depth == 0 && t.is_keyword("PRIMARY") {
                        self.advance();
                        if self.peek().is_keyword("KEY") {
                            is_pk = true;
                            nullable = false;
                        }
                        continue;
                    }
                    self.advance();
                }
                if is_pk {
                    primary_key = vec![col_name.clone()];
                }
                columns.push(ColumnDef {
                    name: col_name,
                    data_type,
                    nullable,
                });
            }
            if self.eat_symbol(",") {
                continue;
            }
            self.expect_symbol(")")?;
            break;
        }
        for col in columns.iter_mut() {
            if primary_key.iter().any(|p| p.eq_ignore_ascii_case(&col.name)) {
                col.nullable = false;
            }
        }
        Ok(TableDef {
            name,
            columns,
            primary_key,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ddl_single_table() {
        let cat = load_schema(b"CREATE TABLE t (id INT, name TEXT)", SchemaFormat::DdlText, None).unwrap();
        assert_eq!(cat.tables.len(), 1);
        assert_eq!(cat.tables[0].columns.len(), 2);
        assert_eq!(cat.tables[0].columns[1].data_type, "TEXT");
    }

    #[test]
    fn json_single_table() {
        let cat = load_schema(
            br#"{"tables":[{"name":"t","columns":[["id","INT"]]}]}"#,
            SchemaFormat::JsonTables,
            None,
        )
        .unwrap();
        assert_eq!(cat.tables.len(), 1);
        assert_eq!(cat.tables[0].columns.len(), 1);
        assert_eq!(cat.schema_id, "default");
    }

    #[test]
    fn constraints_and_opaque_types() {
        let ddl = "create table if not exists dw.Orders (\n  id NUMBER(10, 2) NOT NULL,\n  note GEOGRAPHY_POINT DEFAULT 'x',\n  amt DECIMAL(8,2) CHECK (amt > 0),\n  PRIMARY KEY (id),\n  FOREIGN KEY (note) REFERENCES n(x)\n);\nCREATE INDEX ix ON Orders(id);";
        let cat = load_schema(ddl.as_bytes(), SchemaFormat::DdlText, Some("s")).unwrap();
        let t = &cat.tables[0];
        assert_eq!(t.name, "Orders");
        assert_eq!(t.columns[0].data_type, "NUMBER(10, 2)");
        assert!(!t.columns[0].nullable);
        assert_eq!(t.columns[1].data_type, "GEOGRAPHY_POINT");
        assert_eq!(t.columns[2].data_type, "DECIMAL(8, 2)");
        assert_eq!(t.primary_key, vec!["id"]);
        assert!(cat.table("orders").is_some());
    }

    #[test]
    fn duplicate_table_rejected_case_insensitively() {
        let err = load_schema(
            b"CREATE TABLE t (a INT); CREATE TABLE T (b INT);",
            SchemaFormat::DdlText,
            None,
        )
        .unwrap_err();
        assert_eq!(err, SchemaError::DuplicateTable("T".into()));
    }

    #[test]
    fn duplicate_column_rejected() {
        let err = load_schema(b"CREATE TABLE t (a INT, A TEXT)", SchemaFormat::DdlText, None).unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateColumn { .. }));
    }

    #[test]
    fn parse_error_has_location() {
        let err = load_schema(b"CREATE TABLE t (a INT,\n", SchemaFormat::DdlText, None).unwrap_err();
        assert!(matches!(err, SchemaError::Parse { location, .. } if location.line == 2));
        let err = load_schema(b"DROP TABLE t", SchemaFormat::DdlText, None).unwrap_err();
        assert!(matches!(err, SchemaError::Parse { .. }));
    }

    #[test]
    fn format_detection() {
        assert_eq!(SchemaFormat::detect(b"  {\"tables\":[]}"), SchemaFormat::JsonTables);
        assert_eq!(SchemaFormat::detect(b"CREATE TABLE"), SchemaFormat::DdlText);
    }
}
