pub mod evaluation;
pub mod generation;
pub mod retrieval;
pub mod sql;
pub mod workflow;

pub use sql::{
    decompose, extract_tables, load_schema, nesting_depth, parse_sql, plan_to_sql, render_sql, DecompositionPlan,
    Dialect, SchemaCatalog, SqlAst, TableDef,
};
