//! Automated five-level fidelity rubric for backtranslated SQL.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::compare::results_match;
use super::exec::ExecBackend;
use crate::sql::analysis::{has_top_level_distinct, has_top_level_order_by, referenced_tables};
use crate::sql::{parse_sql, Dialect, SchemaCatalog, SqlAst};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricReason {
    ExecutionFailed,
    WrongTables,
    ResultMismatch,
    OrderMismatch,
    SuperfluousClause,
    /// Different base tables that still produce the original result.
    EquivalentStructure,
    FullyCorrect,
    HumanOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricJudgment {
    pub level: u8,
    pub reason: RubricReason,
    pub detail: String,
    pub auto: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
}

impl RubricJudgment {
    fn auto(level: u8, reason: RubricReason, detail: impl Into<String>) -> Self {
        RubricJudgment {
            level,
            reason,
            detail: detail.into(),
            auto: true,
            annotator_id: None,
        }
    }

    pub fn human(level: u8, annotator_id: &str, note: &str) -> Result<Self, String> {
        if !(1..=5).contains(&level) {
            return Err(format!("rubric level {level} is outside 1..=5"));
        }
        if annotator_id.trim().is_empty() {
            return Err("a rubric override needs an annotator id".into());
        }
        Ok(RubricJudgment {
            level,
            reason: RubricReason::HumanOverride,
            detail: note.to_string(),
            auto: false,
            annotator_id: Some(annotator_id.to_string()),
        })
    }
}

fn parse_any(sql: &str) -> Option<SqlAst> {
    [Dialect::Sqlite, Dialect::Generic, Dialect::MitWarehouse]
        .iter()
        .find_map(|d| parse_sql(sql, *d).ok())
}

fn base_tables(ast: &SqlAst, catalog: &SchemaCatalog) -> BTreeSet<String> {
    referenced_tables(&ast.query, &[])
        .into_iter()
        .map(|t| catalog.table(&t).map(|d| d.name.clone()).unwrap_or(t).to_lowercase())
        .collect()
}

/// Grades `regen_sql` against `original_sql`, which must execute on `db`.
pub fn classify_rubric(
    original_sql: &str,
    regen_sql: &str,
    db: &dyn ExecBackend,
    catalog: &SchemaCatalog,
) -> RubricJudgment {
    let orig = match db.execute(original_sql) {
        Ok(t) => t,
        Err(e) => {
            return RubricJudgment::auto(1, RubricReason::ExecutionFailed, format!("original failed: {e}"));
        }
    };
    let Some(regen_ast) = parse_any(regen_sql) else {
        return RubricJudgment::auto(1, RubricReason::ExecutionFailed, "regenerated SQL does not parse");
    };
    let regen = match db.execute(regen_sql) {
        Ok(t) => t,
        Err(e) => return RubricJudgment::auto(1, RubricReason::ExecutionFailed, e.to_string()),
    };
    let multiset = results_match(&orig, &regen, false);
    let orig_ast = parse_any(original_sql);
    if let Some(orig_ast) = &orig_ast {
        let (a, b) = (base_tables(orig_ast, catalog), base_tables(&regen_ast, catalog));
        if a != b {
            if !multiset {
                return RubricJudgment::auto(
                    2,
                    RubricReason::WrongTables,
                    format!("tables {:?} instead of {:?}", b, a),
                );
            }
            return RubricJudgment::auto(
                4,
                RubricReason::EquivalentStructure,
                format!("tables {:?} instead of {:?} with the same result", b, a),
            );
        }
    }
    if !multiset {
        return RubricJudgment::auto(3, RubricReason::ResultMismatch, "same tables, different result rows");
    }
    if orig.ordered && !results_match(&orig, &regen, true) {
        return RubricJudgment::auto(4, RubricReason::OrderMismatch, "rows match but not in the original order");
    }
    let orig_order = orig_ast.as_ref().is_some_and(has_top_level_order_by);
    let orig_distinct = orig_ast.as_ref().is_some_and(has_top_level_distinct);
    let mut extra = Vec::new();
    if has_top_level_order_by(&regen_ast) && !orig_order {
        extra.push("ORDER BY");
    }
    if has_top_level_distinct(&regen_ast) && !orig_distinct {
        extra.push("DISTINCT");
    }
    if !extra.is_empty() {
        return RubricJudgment::auto(
            4,
            RubricReason::SuperfluousClause,
            format!("superfluous {}", extra.join(" and ")),
        );
    }
    RubricJudgment::auto(5, RubricReason::FullyCorrect, "result matches")
}
