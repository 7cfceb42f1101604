//! Rewrites nested queries into an ordered chain of `step_k` CTEs.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::analysis::{all_subqueries, contains_with, first_outer_reference, nesting_depth, output_names, referenced_tables};
use super::ast::*;
use super::error::DecomposeError;
use super::render::render_sql;
use super::schema::SchemaCatalog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub cte_name: String,
    pub subquery: SqlAst,
    pub depends_on: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub steps: Vec<PlanStep>,
    #[serde(rename = "final")]
    pub final_query: SqlAst,
}

impl DecompositionPlan {
    pub fn step_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.cte_name.as_str()).collect()
    }
}

/// Decomposes using qualified references only to detect correlation.
pub fn decompose(ast: &SqlAst) -> Result<DecompositionPlan, DecomposeError> {
    decompose_with_catalog(ast, None)
}

/// Decomposes; with a catalog, unqualified outer columns are also detected.
pub fn decompose_with_catalog(
    ast: &SqlAst,
    catalog: Option<&SchemaCatalog>,
) -> Result<DecompositionPlan, DecomposeError> {
    if nesting_depth(ast) == 0 {
        return Err(DecomposeError::NotNested);
    }
    if contains_with(&ast.query) {
        return Err(DecomposeError::ExistingWith);
    }
    for sub in all_subqueries(&ast.query) {
        if let Some(reference) = first_outer_reference(sub, catalog) {
            return Err(DecomposeError::CorrelatedSubquery { reference });
        }
    }
    let mut root = ast.query.clone();
    let mut steps = Vec::new();
    lift_children(&mut root, ast.dialect, &mut steps);
    Ok(DecompositionPlan {
        steps,
        final_query: SqlAst {
            dialect: ast.dialect,
            query: root,
        },
    })
}

/// Renders the plan as one `WITH step_1 AS (...), ... <final>` statement.
pub fn plan_to_sql(plan: &DecompositionPlan) -> String {
    let ctes = plan
        .steps
        .iter()
        .map(|s| Cte {
            name: Ident::new(&s.cte_name),
            columns: Vec::new(),
            query: Box::new(s.subquery.query.clone()),
        })
        .collect();
    let mut query = plan.final_query.query.clone();
    query.with = Some(With {
        recursive: false,
        ctes,
    });
    render_sql(&SqlAst {
        dialect: plan.final_query.dialect,
        query,
    })
}

enum Slot<'a> {
    Query(&'a mut Query),
    Derived(&'a mut TableFactor),
}

/// Post-order: children are lifted before their parent, so inner
/// subqueries become the earliest steps.
fn lift_children(q: &mut Query, dialect: Dialect, steps: &mut Vec<PlanStep>) {
    let mut slots = Vec::new();
    query_slots(q, &mut slots);
    for slot in slots {
        match slot {
            Slot::Query(sub) => {
                lift_children(sub, dialect, steps);
                let name = push_step(sub.clone(), dialect, steps);
                *sub = step_stub(sub, &name);
            }
            Slot::Derived(factor) => {
                if let TableFactor::Derived { subquery, alias } = factor {
                    lift_children(subquery, dialect, steps);
                    let name = push_step((**subquery).clone(), dialect, steps);
                    *factor = TableFactor::Table {
                        name: ObjectName::simple(name),
                        alias: alias.take(),
                    };
                }
            }
        }
    }
}

fn push_step(query: Query, dialect: Dialect, steps: &mut Vec<PlanStep>) -> String {
    let name = format!("step_{}", steps.len() + 1);
    let earlier: HashSet<String> = steps.iter().map(|s| s.cte_name.clone()).collect();
    let depends_on = referenced_tables(&query, &[])
        .into_iter()
        .filter(|t| earlier.contains(&t.to_lowercase()))
        .collect();
    steps.push(PlanStep {
        cte_name: name.clone(),
        subquery: SqlAst { dialect, query },
        depends_on,
    });
    name
}

/// `SELECT <cols> FROM step_k`, or `SELECT *` when the columns are not
/// all distinctly named.
fn step_stub(lifted: &Query, step: &str) -> Query {
    let names = output_names(lifted);
    let mut seen = HashSet::new();
    let nameable = names
        .iter()
        .all(|n| n.as_ref().is_some_and(|n| seen.insert(n.to_lowercase()) && plain_name(n)));
    let projection = if nameable {
        names
            .into_iter()
            .flatten()
            .map(|n| SelectItem::Expr {
                expr: Expr::ident(n),
                alias: None,
            })
            .collect()
    } else {
        vec![SelectItem::Wildcard]
    };
    Query::from_select(Select {
        quantifier: None,
        projection,
        from: vec![TableWithJoins {
            relation: TableFactor::Table {
                name: ObjectName::simple(step),
                alias: None,
            },
            joins: Vec::new(),
        }],
        selection: None,
        group_by: Vec::new(),
        having: None,
    })
}

fn plain_name(n: &str) -> bool {
    let mut chars = n.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// True for a stub produced by decomposition: a bare projection of one of
/// `steps` with no other clauses.
pub fn is_step_stub(q: &Query, steps: &[&str]) -> bool {
    if q.with.is_some() || !q.order_by.is_empty() || q.limit.is_some() {
        return false;
    }
    let SetExpr::Select(s) = &q.body else {
        return false;
    };
    let [TableWithJoins {
        relation: TableFactor::Table { name, alias: None },
        joins,
    }] = s.from.as_slice()
    else {
        return false;
    };
    joins.is_empty()
        && s.quantifier.is_none()
        && s.selection.is_none()
        && s.group_by.is_empty()
        && s.having.is_none()
        && name.0.len() == 1
        && steps.iter().any(|st| st.eq_ignore_ascii_case(&name.0[0].value))
        && s.projection.iter().all(|p| {
            matches!(
                p,
                SelectItem::Wildcard | SelectItem::Expr { expr: Expr::Identifier(_), alias: None }
            )
        })
}

/// Nesting depth ignoring step stubs; 0 for every step of a valid plan.
pub fn residual_depth(q: &Query, steps: &[&str]) -> usize {
    super::analysis::child_queries(q)
        .into_iter()
        .filter(|c| !is_step_stub(c, steps))
        .map(|c| 1 + residual_depth(c, steps))
        .max()
        .unwrap_or(0)
}

// ---- mutable traversal ---------------------------------------------------

fn query_slots<'a>(q: &'a mut Query, out: &mut Vec<Slot<'a>>) {
    let Query {
        body,
        order_by,
        limit,
        ..
    } = q;
    body_slots(body, out);
    for o in order_by.iter_mut() {
        expr_slots(&mut o.expr, out);
    }
    if let Some(l) = limit {
        if let Some(c) = &mut l.count {
            expr_slots(c, out);
        }
        if let Some(o) = &mut l.offset {
            expr_slots(o, out);
        }
    }
}

fn body_slots<'a>(b: &'a mut SetExpr, out: &mut Vec<Slot<'a>>) {
    match b {
        SetExpr::Select(s) => {
            let Select {
                projection,
                from,
                selection,
                group_by,
                having,
                ..
            } = s.as_mut();
            for item in projection.iter_mut() {
                if let SelectItem::Expr { expr, .. } = item {
                    expr_slots(expr, out);
                }
            }
            for twj in from.iter_mut() {
                twj_slots(twj, out);
            }
            if let Some(e) = selection {
                expr_slots(e, out);
            }
            for e in group_by.iter_mut() {
                expr_slots(e, out);
            }
            if let Some(e) = having {
                expr_slots(e, out);
            }
        }
        SetExpr::Query(q) => query_slots(q, out),
        SetExpr::SetOperation { left, right, .. } => {
            body_slots(left, out);
            body_slots(right, out);
        }
    }
}

fn twj_slots<'a>(twj: &'a mut TableWithJoins, out: &mut Vec<Slot<'a>>) {
    factor_slots(&mut twj.relation, out);
    for j in twj.joins.iter_mut() {
        let Join {
            relation,
            constraint,
            ..
        } = j;
        factor_slots(relation, out);
        if let JoinConstraint::On(e) = constraint {
            expr_slots(e, out);
        }
    }
}

fn factor_slots<'a>(f: &'a mut TableFactor, out: &mut Vec<Slot<'a>>) {
    if matches!(f, TableFactor::Derived { .. }) {
        out.push(Slot::Derived(f));
    } else if let TableFactor::NestedJoin(inner) = f {
        twj_slots(inner, out);
    }
}

fn expr_slots<'a>(e: &'a mut Expr, out: &mut Vec<Slot<'a>>) {
    match e {
        Expr::Identifier(_) | Expr::CompoundIdentifier(_) | Expr::Literal(_) | Expr::TypedString { .. } => {}
        Expr::Nested(inner) | Expr::UnaryOp { expr: inner, .. } | Expr::IsNull { expr: inner, .. } => {
            expr_slots(inner, out)
        }
        Expr::Cast { expr, .. } => expr_slots(expr, out),
        Expr::BinaryOp { left, right, .. } => {
            expr_slots(left, out);
            expr_slots(right, out);
        }
        Expr::Between { expr, low, high, .. } => {
            expr_slots(expr, out);
            expr_slots(low, out);
            expr_slots(high, out);
        }
        Expr::InList { expr, list, .. } => {
            expr_slots(expr, out);
            for item in list.iter_mut() {
                expr_slots(item, out);
            }
        }
        Expr::InSubquery { expr, subquery, .. } => {
            expr_slots(expr, out);
            out.push(Slot::Query(subquery));
        }
        Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => out.push(Slot::Query(subquery)),
        Expr::Like {
            expr,
            pattern,
            escape,
            ..
        } => {
            expr_slots(expr, out);
            expr_slots(pattern, out);
            if let Some(esc) = escape {
                expr_slots(esc, out);
            }
        }
        Expr::Function { args, over, .. } => {
            if let FunctionArgs::List { args, .. } = args {
                for a in args.iter_mut() {
                    expr_slots(a, out);
                }
            }
            if let Some(WindowSpec::Inline {
                partition_by,
                order_by,
                ..
            }) = over
            {
                for p in partition_by.iter_mut() {
                    expr_slots(p, out);
                }
                for o in order_by.iter_mut() {
                    expr_slots(&mut o.expr, out);
                }
            }
        }
        Expr::Case {
            operand,
            branches,
            else_result,
        } => {
            if let Some(op) = operand {
                expr_slots(op, out);
            }
            for (c, r) in branches.iter_mut() {
                expr_slots(c, out);
                expr_slots(r, out);
            }
            if let Some(e) = else_result {
                expr_slots(e, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_sql;
    use super::*;

    fn ast(sql: &str) -> SqlAst {
        parse_sql(sql, Dialect::Generic).unwrap()
    }

    #[test]
    fn single_in_subquery() {
        let plan = decompose(&ast("SELECT a FROM t WHERE a IN (SELECT b FROM u)")).unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].cte_name, "step_1");
        assert_eq!(render_sql(&plan.steps[0].subquery), "SELECT b FROM u");
        assert_eq!(
            render_sql(&plan.final_query),
            "SELECT a FROM t WHERE a IN (SELECT b FROM step_1)"
        );
        assert_eq!(
            plan_to_sql(&plan),
            "WITH step_1 AS (SELECT b FROM u) SELECT a FROM t WHERE a IN (SELECT b FROM step_1)"
        );
    }

    #[test]
    fn flat_query_not_nested() {
        assert_eq!(decompose(&ast("SELECT a FROM t")), Err(DecomposeError::NotNested));
    }

    #[test]
    fn innermost_first_with_dependencies() {
        let plan = decompose(&ast(
            "SELECT name FROM s WHERE term IN (SELECT code FROM terms WHERE year = (SELECT MAX(year) FROM terms))",
        ))
        .unwrap();
        assert_eq!(plan.step_names(), vec!["step_1", "step_2"]);
        assert_eq!(render_sql(&plan.steps[0].subquery), "SELECT MAX(year) FROM terms");
        assert_eq!(
            render_sql(&plan.steps[1].subquery),
            "SELECT code FROM terms WHERE year = (SELECT * FROM step_1)"
        );
        assert_eq!(plan.steps[1].depends_on, BTreeSet::from(["step_1".to_string()]));
        for step in &plan.steps {
            assert_eq!(residual_depth(&step.subquery.query, &plan.step_names()), 0);
        }
    }

    #[test]
    fn independent_steps_listed_in_source_order() {
        let plan = decompose(&ast(
            "SELECT a FROM t WHERE a IN (SELECT b FROM u) AND c > (SELECT AVG(c) FROM v)",
        ))
        .unwrap();
        assert!(plan.steps.iter().all(|s| s.depends_on.is_empty()));
        assert!(plan_to_sql(&plan).starts_with(
            "WITH step_1 AS (SELECT b FROM u), step_2 AS (SELECT AVG(c) FROM v) SELECT"
        ));
    }

    #[test]
    fn derived_table_becomes_aliased_step() {
        let plan = decompose(&ast("SELECT d.x FROM (SELECT a AS x FROM t) AS d")).unwrap();
        assert_eq!(render_sql(&plan.final_query), "SELECT d.x FROM step_1 AS d");
    }

    #[test]
    fn correlated_subquery_refused() {
        let err = decompose(&ast(
            "SELECT a FROM t WHERE EXISTS (SELECT 1 FROM u WHERE u.k = t.k)",
        ))
        .unwrap_err();
        assert_eq!(
            err,
            DecomposeError::CorrelatedSubquery {
                reference: "t.k".into()
            }
        );
    }

    #[test]
    fn existing_with_refused() {
        assert_eq!(
            decompose(&ast("WITH c AS (SELECT 1 AS a) SELECT a FROM c WHERE a IN (SELECT 1)")),
            Err(DecomposeError::ExistingWith)
        );
    }

    #[test]
    fn plan_serializes_final_key() {
        let plan = decompose(&ast("SELECT a FROM t WHERE a IN (SELECT b FROM u)")).unwrap();
        let v = serde_json::to_value(&plan).unwrap();
        assert!(v.get("final").is_some());
    }
}
