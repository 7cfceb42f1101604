use thiserror::Error;

/// 1-based position in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {location}: unexpected {token}, expected {expected}")]
    Syntax {
        location: Location,
        token: String,
        expected: String,
    },
    #[error("unsupported construct at {location}: {construct}")]
    UnsupportedConstruct { location: Location, construct: String },
    #[error("empty SQL text")]
    Empty,
}

impl ParseError {
    pub fn location(&self) -> Option<Location> {
        match self {
            ParseError::Syntax { location, .. } | ParseError::UnsupportedConstruct { location, .. } => {
                Some(*location)
            }
            ParseError::Empty => None,
        }
    }

    /// Offending token for syntax errors.
    pub fn token(&self) -> Option<&str> {
        match self {
            ParseError::Syntax { token, .. } => Some(token),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema parse error at {location}: {message}")]
    Parse { location: Location, message: String },
    #[error("invalid schema JSON: {0}")]
    Json(String),
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{column}` in table `{table}`")]
    DuplicateColumn { table: String, column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("unknown table(s): {}", .0.join(", "))]
    UnknownTable(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecomposeError {
    #[error("query has no nested subqueries")]
    NotNested,
    #[error("correlated subquery references outer name `{reference}`; annotate the query whole")]
    CorrelatedSubquery { reference: String },
    #[error("query already defines a WITH clause; annotate the query whole")]
    ExistingWith,
}
