//! Canonical text form: uppercase keywords, single spaces, explicit `AS`.

use super::ast::*;
use super::lexer::closing_quote;

pub fn render_sql(ast: &SqlAst) -> String {
    let mut r = Renderer {
        out: String::new(),
        dialect: ast.dialect,
    };
    r.query(&ast.query);
    r.out
}

/// Renders a single expression; used in prompts and diagnostics.
pub fn render_expr(expr: &Expr, dialect: Dialect) -> String {
    let mut r = Renderer {
        out: String::new(),
        dialect,
    };
    r.expr(expr);
    r.out
}

struct Renderer {
    out: String,
    dialect: Dialect,
}

impl Renderer {
    fn push(&mut self, s: &str) {
        self.out.push_str(s);
    }

    fn comma_list<T>(&mut self, items: &[T], mut f: impl FnMut(&mut Self, &T)) {
        for (i, item) in items.iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            f(self, item);
        }
    }

    fn ident(&mut self, id: &Ident) {
        match id.quote {
            Some(q) => {
                self.out.push(q);
                self.out.push_str(&id.value);
                self.out.push(closing_quote(q));
            }
            None => self.out.push_str(&id.value),
        }
    }

    fn object_name(&mut self, name: &ObjectName) {
        for (i, part) in name.0.iter().enumerate() {
            if i > 0 {
                self.push(".");
            }
            self.ident(part);
        }
    }

    fn query(&mut self, q: &Query) {
        if let Some(with) = &q.with {
            self.push("WITH ");
            if with.recursive {
                self.push("RECURSIVE ");
            }
            self.comma_list(&with.ctes, |r, cte| {
                r.ident(&cte.name);
                if !cte.columns.is_empty() {
                    r.push("(");
                    r.comma_list(&cte.columns, |r, c| r.ident(c));
                    r.push(")");
                }
                r.push(" AS (");
                r.query(&cte.query);
                r.push(")");
            });
            self.push(" ");
        }
        self.set_expr(&q.body);
        if !q.order_by.is_empty() {
            self.push(" ORDER BY ");
            self.order_items(&q.order_by);
        }
        if let Some(limit) = &q.limit {
            self.limit(limit);
        }
    }

    fn set_expr(&mut self, body: &SetExpr) {
        match body {
            SetExpr::Select(s) => self.select(s),
            SetExpr::Query(q) => {
                self.push("(");
                self.query(q);
                self.push(")");
            }
            SetExpr::SetOperation {
                op,
                all,
                left,
                right,
            } => {
                self.set_expr(left);
                self.push(match op {
                    SetOperator::Union => " UNION ",
                    SetOperator::Intersect => " INTERSECT ",
                    SetOperator::Except => " EXCEPT ",
                    SetOperator::Minus => " MINUS ",
                });
                if *all {
                    self.push("ALL ");
                }
                self.set_expr(right);
            }
        }
    }

    fn select(&mut self, s: &Select) {
        self.push("SELECT ");
        match s.quantifier {
            Some(Quantifier::Distinct) => self.push("DISTINCT "),
            Some(Quantifier::All) => self.push("ALL "),
            None => {}
        }
        self.comma_list(&s.projection, |r, item| match item {
            SelectItem::Wildcard => r.push("*"),
            SelectItem::QualifiedWildcard(name) => {
                r.object_name(name);
                r.push(".*");
            }
            SelectItem::Expr { expr, alias } => {
                r.expr(expr);
                if let Some(alias) = alias {
                    r.push(" AS ");
                    r.ident(alias);
                }
            }
        });
        if !s.from.is_empty() {
            self.push(" FROM ");
            self.comma_list(&s.from, |r, t| r.table_with_joins(t));
        }
        if let Some(sel) = &s.selection {
            self.push(" WHERE ");
            self.expr(sel);
        }
        if !s.group_by.is_empty() {
            self.push(" GROUP BY ");
            self.comma_list(&s.group_by, |r, e| r.expr(e));
        }
        if let Some(h) = &s.having {
            self.push(" HAVING ");
            self.expr(h);
        }
    }

    fn table_with_joins(&mut self, t: &TableWithJoins) {
        self.table_factor(&t.relation);
        for join in &t.joins {
            self.push(" ");
            if join.natural {
                self.push("NATURAL ");
            }
            self.push(match join.kind {
                JoinKind::Plain => "JOIN ",
                JoinKind::Inner => "INNER JOIN ",
                JoinKind::Left { outer: false } => "LEFT JOIN ",
                JoinKind::Left { outer: true } => "LEFT OUTER JOIN ",
                JoinKind::Right { outer: false } => "RIGHT JOIN ",
                JoinKind::Right { outer: true } => "RIGHT OUTER JOIN ",
                JoinKind::Full { outer: false } => "FULL JOIN ",
                JoinKind::Full { outer: true } => "FULL OUTER JOIN ",
                JoinKind::Cross => "CROSS JOIN ",
            });
            self.table_factor(&join.relation);
            match &join.constraint {
                JoinConstraint::On(e) => {
                    self.push(" ON ");
                    self.expr(e);
                }
                JoinConstraint::Using(cols) => {
                    self.push(" USING (");
                    self.comma_list(cols, |r, c| r.ident(c));
                    self.push(")");
                }
                JoinConstraint::None => {}
            }
        }
    }

    fn table_alias(&mut self, alias: &Option<Ident>) {
        if let Some(alias) = alias {
            // Oracle-style warehouses reject AS before a table alias.
            if self.dialect == Dialect::MitWarehouse {
                self.push(" ");
            } else {
                self.push(" AS ");
            }
            self.ident(alias);
        }
    }

    fn table_factor(&mut self, f: &TableFactor) {
        match f {
            TableFactor::Table { name, alias } => {
                self.object_name(name);
                self.table_alias(alias);
            }
            TableFactor::Derived { subquery, alias } => {
                self.push("(");
                self.query(subquery);
                self.push(")");
                self.table_alias(alias);
            }
            TableFactor::NestedJoin(inner) => {
                self.push("(");
                self.table_with_joins(inner);
                self.push(")");
            }
        }
    }

    fn order_items(&mut self, items: &[OrderByItem]) {
        self.comma_list(items, |r, item| {
            r.expr(&item.expr);
            match item.asc {
                Some(true) => r.push(" ASC"),
                Some(false) => r.push(" DESC"),
                None => {}
            }
            match item.nulls_first {
                Some(true) => r.push(" NULLS FIRST"),
                Some(false) => r.push(" NULLS LAST"),
                None => {}
            }
        });
    }

    fn limit(&mut self, l: &LimitClause) {
        match l.syntax {
            LimitSyntax::LimitOffset => {
                if let Some(c) = &l.count {
                    self.push(" LIMIT ");
                    self.expr(c);
                }
                if let Some(o) = &l.offset {
                    self.push(" OFFSET ");
                    self.expr(o);
                }
            }
            LimitSyntax::LimitComma => {
                self.push(" LIMIT ");
                if let Some(o) = &l.offset {
                    self.expr(o);
                    self.push(", ");
                }
                if let Some(c) = &l.count {
                    self.expr(c);
                }
            }
            LimitSyntax::OffsetFetch => {
                if let Some(o) = &l.offset {
                    self.push(" OFFSET ");
                    self.expr(o);
                    self.push(" ROWS");
                }
                if let Some(c) = &l.count {
                    self.push(" FETCH FIRST ");
                    self.expr(c);
                    self.push(" ROWS ONLY");
                }
            }
        }
    }

    fn subquery(&mut self, q: &Query) {
        self.push("(");
        self.query(q);
        self.push(")");
    }

    fn expr(&mut self, e: &Expr) {
        match e {
            Expr::Identifier(id) => self.ident(id),
            Expr::CompoundIdentifier(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        self.push(".");
                    }
                    self.ident(p);
                }
            }
            Expr::Literal(lit) => match lit {
                Literal::Number(n) => self.push(n),
                Literal::String(s) => {
                    self.push("'");
                    self.push(s);
                    self.push("'");
                }
                Literal::Boolean(true) => self.push("TRUE"),
                Literal::Boolean(false) => self.push("FALSE"),
                Literal::Null => self.push("NULL"),
            },
            Expr::TypedString { data_type, value } => {
                self.push(data_type);
                self.push(" '");
                self.push(value);
                self.push("'");
            }
            Expr::Nested(inner) => {
                self.push("(");
                self.expr(inner);
                self.push(")");
            }
            Expr::UnaryOp { op, expr } => match op {
                UnaryOperator::Not => {
                    self.push("NOT ");
                    self.expr(expr);
                }
                UnaryOperator::Minus | UnaryOperator::Plus => {
                    self.push(if *op == UnaryOperator::Minus { "-" } else { "+" });
                    let start = self.out.len();
                    self.expr(expr);
                    // `- -1` must not collapse into a `--` comment.
                    if matches!(self.out[start..].chars().next(), Some('-' | '+')) {
                        self.out.insert(start, ' ');
                    }
                }
            },
            Expr::BinaryOp { left, op, right } => {
                self.expr(left);
                self.push(" ");
                self.push(op.symbol());
                self.push(" ");
                self.expr(right);
            }
            Expr::IsNull { expr, negated } => {
                self.expr(expr);
                self.push(if *negated { " IS NOT NULL" } else { " IS NULL" });
            }
            Expr::Between {
                expr,
                negated,
                low,
                high,
            } => {
                self.expr(expr);
                self.push(if *negated { " NOT BETWEEN " } else { " BETWEEN " });
                self.expr(low);
                self.push(" AND ");
                self.expr(high);
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                self.expr(expr);
                self.push(if *negated { " NOT IN (" } else { " IN (" });
                self.comma_list(list, |r, e| r.expr(e));
                self.push(")");
            }
            Expr::InSubquery {
                expr,
                subquery,
                negated,
            } => {
                self.expr(expr);
                self.push(if *negated { " NOT IN " } else { " IN " });
                self.subquery(subquery);
            }
            Expr::Exists { subquery, negated } => {
                self.push(if *negated { "NOT EXISTS " } else { "EXISTS " });
                self.subquery(subquery);
            }
            Expr::Subquery(q) => self.subquery(q),
            Expr::Like {
                op,
                expr,
                pattern,
                escape,
                negated,
            } => {
                self.expr(expr);
                if *negated {
                    self.push(" NOT");
                }
                self.push(match op {
                    LikeOperator::Like => " LIKE ",
                    LikeOperator::Glob => " GLOB ",
                });
                self.expr(pattern);
                if let Some(esc) = escape {
                    self.push(" ESCAPE ");
                    self.expr(esc);
                }
            }
            Expr::Function { name, args, over } => {
                self.object_name(name);
                self.push("(");
                match args {
                    FunctionArgs::Star => self.push("*"),
                    FunctionArgs::List { distinct, args } => {
                        if *distinct {
                            self.push("DISTINCT ");
                        }
                        self.comma_list(args, |r, e| r.expr(e));
                    }
                }
                self.push(")");
                if let Some(spec) = over {
                    self.push(" OVER ");
                    match spec {
                        WindowSpec::Named(id) => self.ident(id),
                        WindowSpec::Inline {
                            partition_by,
                            order_by,
                            frame,
                        } => {
                            self.push("(");
                            let mut first = true;
                            if !partition_by.is_empty() {
                                self.push("PARTITION BY ");
                                self.comma_list(partition_by, |r, e| r.expr(e));
                                first = false;
                            }
                            if !order_by.is_empty() {
                                if !first {
                                    self.push(" ");
                                }
                                self.push("ORDER BY ");
                                self.order_items(order_by);
                                first = false;
                            }
                            if !frame.is_empty() {
                                if !first {
                                    self.push(" ");
                                }
                                self.push(&frame.join(" "));
                            }
                            self.push(")");
                        }
                    }
                }
            }
            Expr::Case {
                operand,
                branches,
                else_result,
            } => {
                self.push("CASE");
                if let Some(op) = operand {
                    self.push(" ");
                    self.expr(op);
                }
                for (cond, result) in branches {
                    self.push(" WHEN ");
                    self.expr(cond);
                    self.push(" THEN ");
                    self.expr(result);
                }
                if let Some(e) = else_result {
                    self.push(" ELSE ");
                    self.expr(e);
                }
                self.push(" END");
            }
            Expr::Cast { expr, data_type } => {
                self.push("CAST(");
                self.expr(expr);
                self.push(" AS ");
                self.push(data_type);
                self.push(")");
            }
        }
    }
}
