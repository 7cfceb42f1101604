//! Structural queries over the tree: nesting depth, table references and
//! name resolution.

use std::collections::HashSet;

use super::ast::*;
use super::error::ExtractError;
use super::schema::{SchemaCatalog, TableDef};

/// Calls `f` on `e` and every expression below it, stopping at subquery
/// boundaries (the subquery-holding node itself is visited).
pub fn walk_expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Identifier(_)
        | Expr::CompoundIdentifier(_)
        | Expr::Literal(_)
        | Expr::TypedString { .. }
        | Expr::Exists { .. }
        | Expr::Subquery(_) => {}
        Expr::Nested(inner) | Expr::UnaryOp { expr: inner, .. } | Expr::IsNull { expr: inner, .. } => {
            walk_expr(inner, f)
        }
        Expr::Cast { expr, .. } => walk_expr(expr, f),
        Expr::BinaryOp { left, right, .. } => {
            walk_expr(left, f);
            walk_expr(right, f);
        }
        Expr::Between { expr, low, high, .. } => {
            walk_expr(expr, f);
            walk_expr(low, f);
            walk_expr(high, f);
        }
        Expr::InList { expr, list, .. } => {
            walk_expr(expr, f);
            for item in list {
                walk_expr(item, f);
            }
        }
        Expr::InSubquery { expr, .. } => walk_expr(expr, f),
        Expr::Like {
            expr,
            pattern,
            escape,
            ..
        } => {
            walk_expr(expr, f);
            walk_expr(pattern, f);
            if let Some(esc) = escape {
                walk_expr(esc, f);
            }
        }
        Expr::Function { args, over, .. } => {
            if let FunctionArgs::List { args, .. } = args {
                for a in args {
                    walk_expr(a, f);
                }
            }
            if let Some(WindowSpec::Inline {
                partition_by,
                order_by,
                ..
            }) = over
            {
                for p in partition_by {
                    walk_expr(p, f);
                }
                for o in order_by {
                    walk_expr(&o.expr, f);
                }
            }
        }
        Expr::Case {
            operand,
            branches,
            else_result,
        } => {
            if let Some(op) = operand {
                walk_expr(op, f);
            }
            for (c, r) in branches {
                walk_expr(c, f);
                walk_expr(r, f);
            }
            if let Some(e) = else_result {
                walk_expr(e, f);
            }
        }
    }
}

/// The subquery held directly by an expression node, if any.
pub fn expr_subquery(e: &Expr) -> Option<&Query> {
    match e {
        Expr::InSubquery { subquery, .. } | Expr::Exists { subquery, .. } | Expr::Subquery(subquery) => {
            Some(subquery)
        }
        _ => None,
    }
}

/// Top-level expressions of a select core, in clause order.
fn select_exprs<'a>(s: &'a Select, f: &mut impl FnMut(&'a Expr)) {
    for item in &s.projection {
        if let SelectItem::Expr { expr, .. } = item {
            f(expr);
        }
    }
    for twj in &s.from {
        join_exprs(twj, f);
    }
    if let Some(e) = &s.selection {
        f(e);
    }
    for e in &s.group_by {
        f(e);
    }
    if let Some(e) = &s.having {
        f(e);
    }
}

fn join_exprs<'a>(twj: &'a TableWithJoins, f: &mut impl FnMut(&'a Expr)) {
    if let TableFactor::NestedJoin(inner) = &twj.relation {
        join_exprs(inner, f);
    }
    for j in &twj.joins {
        if let TableFactor::NestedJoin(inner) = &j.relation {
            join_exprs(inner, f);
        }
        if let JoinConstraint::On(e) = &j.constraint {
            f(e);
        }
    }
}

fn query_tail_exprs<'a>(q: &'a Query, f: &mut impl FnMut(&'a Expr)) {
    for o in &q.order_by {
        f(&o.expr);
    }
    if let Some(l) = &q.limit {
        if let Some(c) = &l.count {
            f(c);
        }
        if let Some(o) = &l.offset {
            f(o);
        }
    }
}

/// Select cores making up a query body (through set operations and
/// parenthesised operands), left to right.
pub fn select_cores(body: &SetExpr) -> Vec<&Select> {
    let mut out = Vec::new();
    fn go<'a>(b: &'a SetExpr, out: &mut Vec<&'a Select>) {
        match b {
            SetExpr::Select(s) => out.push(s),
            SetExpr::Query(q) => go(&q.body, out),
            SetExpr::SetOperation { left, right, .. } => {
                go(left, out);
                go(right, out);
            }
        }
    }
    go(body, &mut out);
    out
}

fn factor_derived<'a>(f: &'a TableFactor, out: &mut Vec<&'a Query>) {
    match f {
        TableFactor::Table { .. } => {}
        TableFactor::Derived { subquery, .. } => out.push(subquery),
        TableFactor::NestedJoin(inner) => twj_derived(inner, out),
    }
}

fn twj_derived<'a>(twj: &'a TableWithJoins, out: &mut Vec<&'a Query>) {
    factor_derived(&twj.relation, out);
    for j in &twj.joins {
        factor_derived(&j.relation, out);
    }
}

/// Subqueries one level below `q` in source order. CTE bodies are not
/// children: they sit at the level of the query that defines them.
pub fn child_queries(q: &Query) -> Vec<&Query> {
    let mut out = Vec::new();
    collect_children(q, &mut out);
    out
}

fn collect_children<'a>(q: &'a Query, out: &mut Vec<&'a Query>) {
    let mut from_expr = |e: &'a Expr, out: &mut Vec<&'a Query>| {
        walk_expr(e, &mut |n| {
            if let Some(sub) = expr_subquery(n) {
                out.push(sub);
            }
        })
    };
    fn body<'a>(b: &'a SetExpr, out: &mut Vec<&'a Query>, from_expr: &mut impl FnMut(&'a Expr, &mut Vec<&'a Query>)) {
        match b {
            SetExpr::Select(s) => {
                let mut exprs = Vec::new();
                for item in &s.projection {
                    if let SelectItem::Expr { expr, .. } = item {
                        exprs.push(expr);
                    }
                }
                for e in exprs {
                    from_expr(e, out);
                }
                for twj in &s.from {
                    twj_children(twj, out, from_expr);
                }
                let mut rest = Vec::new();
                if let Some(e) = &s.selection {
                    rest.push(e);
                }
                rest.extend(s.group_by.iter());
                if let Some(e) = &s.having {
                    rest.push(e);
                }
                for e in rest {
                    from_expr(e, out);
                }
            }
            SetExpr::Query(inner) => {
                body(&inner.body, out, from_expr);
                let mut tail = Vec::new();
                query_tail_exprs(inner, &mut |e| tail.push(e));
                for e in tail {
                    from_expr(e, out);
                }
            }
            SetExpr::SetOperation { left, right, .. } => {
                body(left, out, from_expr);
                body(right, out, from_expr);
            }
        }
    }
    fn twj_children<'a>(
        twj: &'a TableWithJoins,
        out: &mut Vec<&'a Query>,
        from_expr: &mut impl FnMut(&'a Expr, &mut Vec<&'a Query>),
    ) {
        factor_children(&twj.relation, out, from_expr);
        for j in &twj.joins {
            factor_children(&j.relation, out, from_expr);
            if let JoinConstraint::On(e) = &j.constraint {
                from_expr(e, out);
            }
        }
    }
    fn factor_children<'a>(
        f: &'a TableFactor,
        out: &mut Vec<&'a Query>,
        from_expr: &mut impl FnMut(&'a Expr, &mut Vec<&'a Query>),
    ) {
        match f {
            TableFactor::Table { .. } => {}
            TableFactor::Derived { subquery, .. } => out.push(subquery),
            TableFactor::NestedJoin(inner) => twj_children(inner, out, from_expr),
        }
    }
    body(&q.body, out, &mut from_expr);
    let mut tail = Vec::new();
    query_tail_exprs(q, &mut |e| tail.push(e));
    for e in tail {
        from_expr(e, out);
    }
}

/// CTE bodies defined at the level of `q`, including inside parenthesised
/// set operands.
fn level_ctes(q: &Query) -> Vec<&Query> {
    let mut out: Vec<&Query> = q
        .with
        .iter()
        .flat_map(|w| w.ctes.iter().map(|c| c.query.as_ref()))
        .collect();
    fn go<'a>(b: &'a SetExpr, out: &mut Vec<&'a Query>) {
        match b {
            SetExpr::Select(_) => {}
            SetExpr::Query(inner) => {
                out.extend(level_ctes(inner));
            }
            SetExpr::SetOperation { left, right, .. } => {
                go(left, out);
                go(right, out);
            }
        }
    }
    go(&q.body, &mut out);
    out
}

pub fn query_depth(q: &Query) -> usize {
    let below = child_queries(q).into_iter().map(|c| 1 + query_depth(c)).max().unwrap_or(0);
    let ctes = level_ctes(q).into_iter().map(query_depth).max().unwrap_or(0);
    below.max(ctes)
}

/// Maximum number of select levels nested below the root (0 = flat).
pub fn nesting_depth(ast: &SqlAst) -> usize {
    query_depth(&ast.query)
}

/// Every subquery at any depth, pre-order. CTE bodies are not included.
pub fn all_subqueries(q: &Query) -> Vec<&Query> {
    let mut out = Vec::new();
    fn go<'a>(q: &'a Query, out: &mut Vec<&'a Query>) {
        for cte in level_ctes(q) {
            go(cte, out);
        }
        for c in child_queries(q) {
            out.push(c);
            go(c, out);
        }
    }
    go(q, &mut out);
    out
}

/// True when a WITH clause appears anywhere in the query.
pub fn contains_with(q: &Query) -> bool {
    if !level_ctes(q).is_empty() || q.with.is_some() {
        return true;
    }
    child_queries(q).into_iter().any(contains_with)
}

/// Base table names referenced anywhere, in order of first appearance,
/// deduplicated case-insensitively. CTE names in scope are not base tables;
/// neither is anything listed in `exclude`.
pub fn referenced_tables(q: &Query, exclude: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    let mut scopes: Vec<HashSet<String>> = vec![exclude.iter().map(|s| s.to_lowercase()).collect()];
    table_refs(q, &mut scopes, &mut |name: &str| {
        if seen.insert(name.to_lowercase()) {
            out.push(name.to_string());
        }
    });
    out
}

fn table_refs(q: &Query, scopes: &mut Vec<HashSet<String>>, emit: &mut impl FnMut(&str)) {
    let names: HashSet<String> = q
        .with
        .iter()
        .flat_map(|w| w.ctes.iter().map(|c| c.name.normalized()))
        .collect();
    scopes.push(names);
    if let Some(w) = &q.with {
        for cte in &w.ctes {
            table_refs(&cte.query, scopes, emit);
        }
    }
    body_table_refs(&q.body, scopes, emit);
    let mut tail = Vec::new();
    query_tail_exprs(q, &mut |e| tail.push(e));
    for e in tail {
        expr_table_refs(e, scopes, emit);
    }
    scopes.pop();
}

fn body_table_refs(b: &SetExpr, scopes: &mut Vec<HashSet<String>>, emit: &mut impl FnMut(&str)) {
    match b {
        SetExpr::Select(s) => {
            let mut pending: Vec<&Expr> = Vec::new();
            for item in &s.projection {
                if let SelectItem::Expr { expr, .. } = item {
                    pending.push(expr);
                }
            }
            for e in pending {
                expr_table_refs(e, scopes, emit);
            }
            for twj in &s.from {
                twj_table_refs(twj, scopes, emit);
            }
            let mut rest: Vec<&Expr> = Vec::new();
            if let Some(e) = &s.selection {
                rest.push(e);
            }
            rest.extend(s.group_by.iter());
            if let Some(e) = &s.having {
                rest.push(e);
            }
            for e in rest {
                expr_table_refs(e, scopes, emit);
            }
        }
        SetExpr::Query(q) => table_refs(q, scopes, emit),
        SetExpr::SetOperation { left, right, .. } => {
            body_table_refs(left, scopes, emit);
            body_table_refs(right, scopes, emit);
        }
    }
}

fn twj_table_refs(twj: &TableWithJoins, scopes: &mut Vec<HashSet<String>>, emit: &mut impl FnMut(&str)) {
    factor_table_refs(&twj.relation, scopes, emit);
    for j in &twj.joins {
        factor_table_refs(&j.relation, scopes, emit);
        if let JoinConstraint::On(e) = &j.constraint {
            expr_table_refs(e, scopes, emit);
        }
    }
}

fn factor_table_refs(f: &TableFactor, scopes: &mut Vec<HashSet<String>>, emit: &mut impl FnMut(&str)) {
    match f {
        TableFactor::Table { name, .. } => {
            let base = name.base();
            let shadowed = name.0.len() == 1 && scopes.iter().any(|s| s.contains(&base.normalized()));
            if !shadowed {
                emit(&base.value);
            }
        }
        TableFactor::Derived { subquery, .. } => table_refs(subquery, scopes, emit),
        TableFactor::NestedJoin(inner) => twj_table_refs(inner, scopes, emit),
    }
}

fn expr_table_refs(e: &Expr, scopes: &mut Vec<HashSet<String>>, emit: &mut impl FnMut(&str)) {
    let mut subs = Vec::new();
    walk_expr(e, &mut |n| {
        if let Some(q) = expr_subquery(n) {
            subs.push(q);
        }
    });
    for q in subs {
        table_refs(q, scopes, emit);
    }
}

/// Catalog entries for every base table the query reads.
pub fn extract_tables(ast: &SqlAst, catalog: &SchemaCatalog) -> Result<Vec<TableDef>, ExtractError> {
    extract_tables_excluding(ast, catalog, &[])
}

/// As [`extract_tables`], treating `exclude` (e.g. CTE step names) as non-tables.
pub fn extract_tables_excluding(
    ast: &SqlAst,
    catalog: &SchemaCatalog,
    exclude: &[&str],
) -> Result<Vec<TableDef>, ExtractError> {
    let mut found = Vec::new();
    let mut unknown = Vec::new();
    for name in referenced_tables(&ast.query, exclude) {
        match catalog.table(&name) {
            Some(t) => found.push(t.clone()),
            None => unknown.push(name),
        }
    }
    if unknown.is_empty() {
        Ok(found)
    } else {
        Err(ExtractError::UnknownTable(unknown))
    }
}

/// Output column names of a query, taken from its leftmost select core.
/// `None` marks an unnamed expression or a wildcard.
pub fn output_names(q: &Query) -> Vec<Option<String>> {
    let core = select_cores(&q.body)[0];
    core.projection
        .iter()
        .map(|item| match item {
            SelectItem::Expr { alias: Some(a), .. } => Some(a.value.clone()),
            SelectItem::Expr {
                expr: Expr::Identifier(id),
                ..
            } => Some(id.value.clone()),
            SelectItem::Expr {
                expr: Expr::CompoundIdentifier(parts),
                ..
            } => parts.last().map(|p| p.value.clone()),
            _ => None,
        })
        .collect()
}

pub fn has_top_level_order_by(ast: &SqlAst) -> bool {
    !ast.query.order_by.is_empty()
}

/// DISTINCT on the outermost select core(s).
pub fn has_top_level_distinct(ast: &SqlAst) -> bool {
    select_cores(&ast.query.body).iter().any(|s| s.is_distinct())
}

// ---- name resolution -------------------------------------------------

/// Niladic builtins that parse as bare identifiers.
const BUILTIN_NAMES: &[&str] = &[
    "current_date", "current_time", "current_timestamp", "sysdate", "systimestamp", "rownum", "rowid",
    "localtime", "localtimestamp", "user",
];

struct Scope {
    /// Lowercased qualifiers (aliases and table names) introduced by FROM.
    qualifiers: HashSet<String>,
    /// Known column names; `None` when some source has unknown columns.
    columns: Option<HashSet<String>>,
    aliases: HashSet<String>,
}

/// First name inside `sub` that resolves outside it, if any: a qualified
/// reference whose qualifier no enclosed FROM introduces, or (with a
/// catalog) an unqualified column no enclosed source provides.
pub fn first_outer_reference(sub: &Query, catalog: Option<&SchemaCatalog>) -> Option<String> {
    let mut env: Vec<Scope> = Vec::new();
    let mut ctes: Vec<HashSet<String>> = Vec::new();
    resolve_query(sub, catalog, &mut env, &mut ctes)
}

fn resolve_query(
    q: &Query,
    catalog: Option<&SchemaCatalog>,
    env: &mut Vec<Scope>,
    ctes: &mut Vec<HashSet<String>>,
) -> Option<String> {
    ctes.push(
        q.with
            .iter()
            .flat_map(|w| w.ctes.iter().map(|c| c.name.normalized()))
            .collect(),
    );
    let result = (|| {
        if let Some(w) = &q.with {
            for cte in &w.ctes {
                if let Some(r) = resolve_query(&cte.query, catalog, env, ctes) {
                    return Some(r);
                }
            }
        }
        let cores = select_cores(&q.body);
        for (i, core) in cores.iter().enumerate() {
            // ORDER BY of a plain select sees that select's sources.
            let tail = if i == 0 && matches!(q.body, SetExpr::Select(_)) {
                Some(q)
            } else {
                None
            };
            if let Some(r) = resolve_select(core, tail, catalog, env, ctes) {
                return Some(r);
            }
        }
        if !matches!(q.body, SetExpr::Select(_)) {
            let names: HashSet<String> = output_names(q).into_iter().flatten().map(|n| n.to_lowercase()).collect();
            env.push(Scope {
                qualifiers: HashSet::new(),
                columns: Some(names.clone()),
                aliases: names,
            });
            let mut tail = Vec::new();
            query_tail_exprs(q, &mut |e| tail.push(e));
            let r = tail.into_iter().find_map(|e| resolve_expr(e, catalog, env, ctes));
            env.pop();
            if r.is_some() {
                return r;
            }
        }
        // Set operands wrapped in parentheses may carry their own CTEs.
        for cte in level_ctes(q).into_iter().skip(q.with.as_ref().map_or(0, |w| w.ctes.len())) {
            if let Some(r) = resolve_query(cte, catalog, env, ctes) {
                return Some(r);
            }
        }
        None
    })();
    ctes.pop();
    result
}

fn resolve_select(
    s: &Select,
    tail: Option<&Query>,
    catalog: Option<&SchemaCatalog>,
    env: &mut Vec<Scope>,
    ctes: &mut Vec<HashSet<String>>,
) -> Option<String> {
    let mut scope = Scope {
        qualifiers: HashSet::new(),
        columns: Some(HashSet::new()),
        aliases: HashSet::new(),
    };
    let mut derived = Vec::new();
    for twj in &s.from {
        twj_derived(twj, &mut derived);
    }
    for d in derived {
        if let Some(r) = resolve_query(d, catalog, env, ctes) {
            return Some(r);
        }
    }
    for twj in &s.from {
        add_sources(twj, catalog, ctes, &mut scope);
    }
    for item in &s.projection {
        if let SelectItem::Expr { alias: Some(a), .. } = item {
            scope.aliases.insert(a.normalized());
        }
    }
    env.push(scope);
    let mut exprs = Vec::new();
    select_exprs(s, &mut |e| exprs.push(e));
    if let Some(q) = tail {
        query_tail_exprs(q, &mut |e| exprs.push(e));
    }
    let r = exprs.into_iter().find_map(|e| resolve_expr(e, catalog, env, ctes));
    env.pop();
    r
}

fn add_sources(twj: &TableWithJoins, catalog: Option<&SchemaCatalog>, ctes: &[HashSet<String>], scope: &mut Scope) {
    let mut factors = vec![&twj.relation];
    factors.extend(twj.joins.iter().map(|j| &j.relation));
    for f in factors {
        match f {
            TableFactor::Table { name, alias } => {
                let base = name.base().normalized();
                scope.qualifiers.insert(base.clone());
                if let Some(a) = alias {
                    scope.qualifiers.insert(a.normalized());
                }
                let is_cte = name.0.len() == 1 && ctes.iter().any(|c| c.contains(&base));
                let cols = if is_cte {
                    None
                } else {
                    catalog.and_then(|c| c.table(&base))
                };
                match (cols, scope.columns.as_mut()) {
                    (Some(t), Some(set)) => set.extend(t.columns.iter().map(|c| c.name.to_lowercase())),
                    (None, _) => scope.columns = None,
                    _ => {}
                }
            }
            TableFactor::Derived { subquery, alias } => {
                if let Some(a) = alias {
                    scope.qualifiers.insert(a.normalized());
                }
                let names = output_names(subquery);
                match scope.columns.as_mut() {
                    Some(set) if names.iter().all(Option::is_some) => {
                        set.extend(names.into_iter().flatten().map(|n| n.to_lowercase()))
                    }
                    _ => scope.columns = None,
                }
            }
            TableFactor::NestedJoin(inner) => add_sources(inner, catalog, ctes, scope),
        }
    }
}

fn resolve_expr(
    e: &Expr,
    catalog: Option<&SchemaCatalog>,
    env: &mut Vec<Scope>,
    ctes: &mut Vec<HashSet<String>>,
) -> Option<String> {
    let mut free = None;
    let mut subs = Vec::new();
    walk_expr(e, &mut |n| {
        if free.is_some() {
            return;
        }
        match n {
            Expr::CompoundIdentifier(parts) if parts.len() >= 2 => {
                let qualifier = parts[parts.len() - 2].normalized();
                if !env.iter().any(|s| s.qualifiers.contains(&qualifier)) {
                    free = Some(parts.iter().map(|p| p.value.as_str()).collect::<Vec<_>>().join("."));
                }
            }
            Expr::Identifier(id) if catalog.is_some() => {
                let name = id.normalized();
                let resolved = BUILTIN_NAMES.contains(&name.as_str())
                    || env.iter().any(|s| {
                        s.aliases.contains(&name) || s.columns.as_ref().is_none_or(|c| c.contains(&name))
                    });
                if !resolved {
                    free = Some(id.value.clone());
                }
            }
            _ => {
                if let Some(q) = expr_subquery(n) {
                    subs.push(q);
                }
            }
        }
    });
    if free.is_some() {
        return free;
    }
    subs.into_iter().find_map(|q| resolve_query(q, catalog, env, ctes))
}
