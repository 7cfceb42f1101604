//! SQL parsing, rendering, analysis and CTE decomposition.

pub mod analysis;
pub mod ast;
pub mod decompose;
pub mod error;
pub mod lexer;
pub mod parser;
pub mod render;
pub mod schema;

pub use analysis::{extract_tables, extract_tables_excluding, nesting_depth, referenced_tables};
pub use ast::{Dialect, SqlAst};
pub use decompose::{decompose, decompose_with_catalog, plan_to_sql, DecompositionPlan, PlanStep};
pub use error::{DecomposeError, ExtractError, Location, ParseError, SchemaError};
pub use parser::parse_sql;
pub use render::render_sql;
pub use schema::{load_schema, ColumnDef, SchemaCatalog, SchemaFormat, TableDef};
