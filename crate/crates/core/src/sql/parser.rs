//! Recursive-descent parser for SELECT statements.
//!
//! Binary precedence, lowest first: OR, AND, NOT, comparison (incl. IS, IN,
//! LIKE, BETWEEN), additive, multiplicative, `||`, unary sign.

use super::ast::*;
use super::error::{Location, ParseError};
use super::lexer::{tokenize, Token, TokenKind};

/// Words that never start an identifier or implicit alias.
const RESERVED: &[&str] = &[
    "ALL", "AND", "AS", "ASC", "BETWEEN", "BY", "CASE", "CAST", "CROSS", "DESC", "DISTINCT", "ELSE",
    "END", "ESCAPE", "EXCEPT", "EXISTS", "FALSE", "FETCH", "FROM", "FULL", "GLOB", "GROUP", "HAVING",
    "IN", "INNER", "INTERSECT", "IS", "JOIN", "LEFT", "LIKE", "LIMIT", "MINUS", "NATURAL", "NOT",
    "NULL", "NULLS", "OFFSET", "ON", "OR", "ORDER", "OUTER", "OVER", "RIGHT", "SELECT", "THEN",
    "TRUE", "UNION", "USING", "WHEN", "WHERE", "WINDOW", "WITH",
];

/// Statement keywords outside the grammar; reported as unsupported rather than malformed.
pub(crate) const NON_SELECT_STATEMENTS: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "MERGE", "UPSERT", "REPLACE", "CREATE", "DROP", "ALTER",
    "TRUNCATE", "GRANT", "REVOKE", "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT", "RELEASE", "SET",
    "USE", "PRAGMA", "ANALYZE", "VACUUM", "ATTACH", "DETACH", "EXPLAIN", "CALL", "EXEC", "EXECUTE",
    "DECLARE", "COMMENT", "LOCK", "SHOW", "DESCRIBE", "COPY",
];

/// Functions whose names collide with reserved join keywords.
const KEYWORD_FUNCTIONS: &[&str] = &["LEFT", "RIGHT"];

fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|k| k.eq_ignore_ascii_case(word))
}

/// Parses a single SELECT statement (optionally terminated by `;`).
pub fn parse_sql(text: &str, dialect: Dialect) -> Result<SqlAst, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = tokenize(text, dialect)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        dialect,
    };
    if parser.peek().kind == TokenKind::Eof {
        return Err(ParseError::Empty);
    }
    parser.check_statement_kind()?;
    let query = parser.parse_query()?;
    while parser.eat_symbol(";") {}
    if parser.peek().kind != TokenKind::Eof {
        return Err(parser.unexpected("end of statement"));
    }
    Ok(SqlAst { dialect, query })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dialect: Dialect,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos.min(self.tokens.len() - 1)]
    }

    fn peek_at(&self, offset: usize) -> &Token {
        &self.tokens[(self.pos + offset).min(self.tokens.len() - 1)]
    }

    fn advance(&mut self) -> Token {
        let tok = self.peek().clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        tok
    }

    fn location(&self) -> Location {
        self.peek().location
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            location: self.location(),
            token: self.peek().describe(),
            expected: expected.to_string(),
        }
    }

    fn unsupported(&self, construct: impl Into<String>) -> ParseError {
        ParseError::UnsupportedConstruct {
            location: self.location(),
            construct: construct.into(),
        }
    }

    fn peek_kw(&self, kw: &str) -> bool {
        self.peek().is_keyword(kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.peek_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(kw))
        }
    }

    fn eat_symbol(&mut self, sym: &str) -> bool {
        if self.peek().is_symbol(sym) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat_symbol(sym) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("\"{sym}\"")))
        }
    }

    fn starts_query(&self) -> bool {
        self.peek_kw("SELECT") || self.peek_kw("WITH")
    }

    fn check_statement_kind(&self) -> Result<(), ParseError> {
        let tok = self.peek();
        if self.starts_query() || tok.is_symbol("(") {
            return Ok(());
        }
        if let TokenKind::Word(w) = &tok.kind {
            let upper = w.to_ascii_uppercase();
            if NON_SELECT_STATEMENTS.contains(&upper.as_str()) {
                return Err(self.unsupported(format!("{upper} statement")));
            }
            if upper == "VALUES" {
                return Err(self.unsupported("VALUES statement"));
            }
        }
        Err(self.unexpected("SELECT or WITH"))
    }

    // ---- queries -------------------------------------------------------

    fn parse_query(&mut self) -> Result<Query, ParseError> {
        let with = if self.eat_kw("WITH") {
            Some(self.parse_with()?)
        } else {
            None
        };
        let body = self.parse_set_expr()?;
        let order_by = if self.peek_kw("ORDER") {
            self.advance();
            self.expect_kw("BY")?;
            self.parse_order_items()?
        } else {
            Vec::new()
        };
        let limit = self.parse_limit()?;
        Ok(Query {
            with,
            body,
            order_by,
            limit,
        })
    }

    fn parse_with(&mut self) -> Result<With, ParseError> {
        let recursive = self.eat_kw("RECURSIVE");
        let mut ctes = Vec::new();
        loop {
            let name = self.parse_ident()?;
            let mut columns = Vec::new();
            if self.eat_symbol("(") {
                loop {
                    columns.push(self.parse_ident()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
                self.expect_symbol(")")?;
            }
            self.expect_kw("AS")?;
            if self.peek_kw("MATERIALIZED") || (self.peek_kw("NOT") && self.peek_at(1).is_keyword("MATERIALIZED")) {
                return Err(self.unsupported("MATERIALIZED hint on common table expression"));
            }
            self.expect_symbol("(")?;
            let query = self.parse_query()?;
            self.expect_symbol(")")?;
            ctes.push(Cte {
                name,
                columns,
                query: Box::new(query),
            });
            if !self.eat_symbol(",") {
                break;
            }
        }
        Ok(With { recursive, ctes })
    }

    fn parse_set_expr(&mut self) -> Result<SetExpr, ParseError> {
        let mut left = self.parse_set_operand()?;
        loop {
            let op = if self.peek_kw("UNION") {
                SetOperator::Union
            } else if self.peek_kw("INTERSECT") {
                SetOperator::Intersect
            } else if self.peek_kw("EXCEPT") {
                SetOperator::Except
            } else if self.peek_kw("MINUS") {
                if self.dialect != Dialect::MitWarehouse {
                    return Err(self.unsupported("MINUS set operator"));
                }
                SetOperator::Minus
            } else {
                break;
            };
            self.advance();
            let all = self.eat_kw("ALL");
            let right = self.parse_set_operand()?;
            left = SetExpr::SetOperation {
                op,
                all,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn parse_set_operand(&mut self) -> Result<SetExpr, ParseError> {
        if self.peek().is_symbol("(") {
            self.advance();
            let q = self.parse_query()?;
            self.expect_symbol(")")?;
            return Ok(SetExpr::Query(Box::new(q)));
        }
        if self.peek_kw("SELECT") {
            return Ok(SetExpr::Select(Box::new(self.parse_select()?)));
        }
        if self.peek_kw("VALUES") {
            return Err(self.unsupported("VALUES list"));
        }
        Err(self.unexpected("SELECT"))
    }

    fn parse_select(&mut self) -> Result<Select, ParseError> {
        self.expect_kw("SELECT")?;
        let quantifier = if self.eat_kw("DISTINCT") {
            Some(Quantifier::Distinct)
        } else if self.eat_kw("ALL") {
            Some(Quantifier::All)
        } else {
            None
        };
        if self.peek_kw("TOP") {
            return Err(self.unsupported("TOP clause"));
        }
        let mut projection = Vec::new();
        loop {
            projection.push(self.parse_select_item()?);
            if !self.eat_symbol(",") {
                break;
            }
        }
        let mut from = Vec::new();
        if self.eat_kw("FROM") {
            loop {
                from.push(self.parse_table_with_joins()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let selection = if self.eat_kw("WHERE") {
            Some(self.parse_expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.peek_kw("GROUP") {
            self.advance();
            self.expect_kw("BY")?;
            loop {
                group_by.push(self.parse_expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let having = if self.eat_kw("HAVING") {
            Some(self.parse_expr()?)
        } else {
            None
        };
        if self.peek_kw("WINDOW") {
            return Err(self.unsupported("named WINDOW clause"));
        }
        Ok(Select {
            quantifier,
            projection,
            from,
            selection,
            group_by,
            having,
        })
    }

    fn parse_select_item(&mut self) -> Result<SelectItem, ParseError> {
        if self.eat_symbol("*") {
            return Ok(SelectItem::Wildcard);
        }
        if let Some(name) = self.try_qualified_wildcard()? {
            return Ok(SelectItem::QualifiedWildcard(name));
        }
        let expr = self.parse_expr()?;
        let alias = self.parse_optional_alias()?;
        Ok(SelectItem::Expr { expr, alias })
    }

    /// Matches `a.b.*` without consuming anything on failure.
    fn try_qualified_wildcard(&mut self) -> Result<Option<ObjectName>, ParseError> {
        let mut offset = 0;
        loop {
            if !self.is_ident_token(self.peek_at(offset)) {
                return Ok(None);
            }
            if !self.peek_at(offset + 1).is_symbol(".") {
                return Ok(None);
            }
            if self.peek_at(offset + 2).is_symbol("*") {
                break;
            }
            offset += 2;
        }
        let mut parts = Vec::new();
        loop {
            parts.push(self.parse_ident()?);
            self.expect_symbol(".")?;
            if self.eat_symbol("*") {
                return Ok(Some(ObjectName(parts)));
            }
        }
    }

    fn is_ident_token(&self, tok: &Token) -> bool {
        match &tok.kind {
            TokenKind::Word(w) => !is_reserved(w),
            TokenKind::QuotedIdent { .. } => true,
            _ => false,
        }
    }

    fn parse_optional_alias(&mut self) -> Result<Option<Ident>, ParseError> {
        if self.eat_kw("AS") {
            return Ok(Some(self.parse_ident()?));
        }
        if self.is_ident_token(self.peek()) {
            return Ok(Some(self.parse_ident()?));
        }
        Ok(None)
    }

    fn parse_ident(&mut self) -> Result<Ident, ParseError> {
        let tok = self.peek().clone();
        match tok.kind {
            TokenKind::Word(w) if !is_reserved(&w) => {
                self.advance();
                Ok(Ident {
                    value: w,
                    quote: None,
                })
            }
            TokenKind::QuotedIdent { value, quote } => {
                self.advance();
                Ok(Ident {
                    value,
                    quote: Some(quote),
                })
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn parse_object_name(&mut self) -> Result<ObjectName, ParseError> {
        let mut parts = vec![self.parse_ident()?];
        while self.peek().is_symbol(".") {
            self.advance();
            parts.push(self.parse_ident()?);
        }
        Ok(ObjectName(parts))
    }

    fn parse_table_with_joins(&mut self) -> Result<TableWithJoins, ParseError> {
        let relation = self.parse_table_factor()?;
        let mut joins = Vec::new();
        loop {
            let natural = self.eat_kw("NATURAL");
            let kind = if self.eat_kw("JOIN") {
                JoinKind::Plain
            } else if self.eat_kw("INNER") {
                self.expect_kw("JOIN")?;
                JoinKind::Inner
            } else if self.eat_kw("CROSS") {
                self.expect_kw("JOIN")?;
                JoinKind::Cross
            } else if self.peek_kw("LEFT") || self.peek_kw("RIGHT") || self.peek_kw("FULL") {
                let which = self.advance();
                let outer = self.eat_kw("OUTER");
                self.expect_kw("JOIN")?;
                if which.is_keyword("LEFT") {
                    JoinKind::Left { outer }
                } else if which.is_keyword("RIGHT") {
                    JoinKind::Right { outer }
                } else {
                    JoinKind::Full { outer }
                }
            } else if natural {
                return Err(self.unexpected("JOIN"));
            } else {
                break;
            };
            let relation = self.parse_table_factor()?;
            let constraint = if self.eat_kw("ON") {
                JoinConstraint::On(self.parse_expr()?)
            } else if self.eat_kw("USING") {
                self.expect_symbol("(")?;
                let mut cols = Vec::new();
                loop {
                    cols.push(self.parse_ident()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
                self.expect_symbol(")")?;
                JoinConstraint::Using(cols)
            } else {
                JoinConstraint::None
            };
            joins.push(Join {
                natural,
                kind,
                relation,
                constraint,
            });
        }
        Ok(TableWithJoins { relation, joins })
    }

    fn parse_table_factor(&mut self) -> Result<TableFactor, ParseError> {
        if self.peek().is_symbol("(") {
            self.advance();
            if self.starts_query() {
                let q = self.parse_query()?;
                self.expect_symbol(")")?;
                let alias = self.parse_optional_alias()?;
                return Ok(TableFactor::Derived {
                    subquery: Box::new(q),
                    alias,
                });
            }
            let inner = self.parse_table_with_joins()?;
            self.expect_symbol(")")?;
            return Ok(TableFactor::NestedJoin(Box::new(inner)));
        }
        if self.peek_kw("LATERAL") {
            return Err(self.unsupported("LATERAL derived table"));
        }
        let name = self.parse_object_name()?;
        if self.peek().is_symbol("(") {
            return Err(self.unsupported("table-valued function"));
        }
        let alias = self.parse_optional_alias()?;
        Ok(TableFactor::Table { name, alias })
    }

    fn parse_order_items(&mut self) -> Result<Vec<OrderByItem>, ParseError> {
        let mut items = Vec::new();
        loop {
            let expr = self.parse_expr()?;
            let asc = if self.eat_kw("ASC") {
                Some(true)
            } else if self.eat_kw("DESC") {
                Some(false)
            } else {
                None
            };
            let nulls_first = if self.eat_kw("NULLS") {
                if self.eat_kw("FIRST") {
                    Some(true)
                } else if self.eat_kw("LAST") {
                    Some(false)
                } else {
                    return Err(self.unexpected("FIRST or LAST"));
                }
            } else {
                None
            };
            items.push(OrderByItem {
                expr,
                asc,
                nulls_first,
            });
            if !self.eat_symbol(",") {
                break;
            }
        }
        Ok(items)
    }

    fn parse_limit(&mut self) -> Result<Option<LimitClause>, ParseError> {
        if self.peek_kw("LIMIT") {
            if self.dialect == Dialect::MitWarehouse {
                return Err(self.unsupported("LIMIT clause (use FETCH FIRST)"));
            }
            self.advance();
            let first = self.parse_expr()?;
            if self.peek().is_symbol(",") {
                if self.dialect != Dialect::Sqlite {
                    return Err(self.unsupported("LIMIT offset, count"));
                }
                self.advance();
                let count = self.parse_expr()?;
                return Ok(Some(LimitClause {
                    syntax: LimitSyntax::LimitComma,
                    count: Some(count),
                    offset: Some(first),
                }));
            }
            let offset = if self.eat_kw("OFFSET") {
                Some(self.parse_expr()?)
            } else {
                None
            };
            return Ok(Some(LimitClause {
                syntax: LimitSyntax::LimitOffset,
                count: Some(first),
                offset,
            }));
        }
        if !(self.peek_kw("OFFSET") || self.peek_kw("FETCH")) {
            return Ok(None);
        }
        if self.dialect == Dialect::Sqlite {
            return Err(self.unsupported("OFFSET/FETCH FIRST clause"));
        }
        let mut offset = None;
        if self.eat_kw("OFFSET") {
            offset = Some(self.parse_expr()?);
            if !(self.eat_kw("ROWS") || self.eat_kw("ROW")) {
                return Err(self.unexpected("ROWS"));
            }
        }
        let mut count = None;
        if self.eat_kw("FETCH") {
            if !(self.eat_kw("FIRST") || self.eat_kw("NEXT")) {
                return Err(self.unexpected("FIRST or NEXT"));
            }
            count = Some(self.parse_expr()?);
            if !(self.eat_kw("ROWS") || self.eat_kw("ROW")) {
                return Err(self.unexpected("ROWS"));
            }
            self.expect_kw("ONLY")?;
        }
        Ok(Some(LimitClause {
            syntax: LimitSyntax::OffsetFetch,
            count,
            offset,
        }))
    }

    // ---- expressions ---------------------------------------------------

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        self.parse_or()
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_and()?;
        while self.eat_kw("OR") {
            let right = self.parse_and()?;
            left = binary(left, BinaryOperator::Or, right);
        }
        Ok(left)
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_not()?;
        while self.eat_kw("AND") {
            let right = self.parse_not()?;
            left = binary(left, BinaryOperator::And, right);
        }
        Ok(left)
    }

    fn parse_not(&mut self) -> Result<Expr, ParseError> {
        if self.peek_kw("NOT") && !self.peek_at(1).is_keyword("EXISTS") {
            self.advance();
            let expr = self.parse_not()?;
            return Ok(Expr::UnaryOp {
                op: UnaryOperator::Not,
                expr: Box::new(expr),
            });
        }
        self.parse_comparison()
    }

    fn parse_comparison(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_additive()?;
        loop {
            if let TokenKind::Symbol(sym) = self.peek().kind {
                let op = match sym {
                    "=" => Some(BinaryOperator::Eq),
                    "==" => Some(BinaryOperator::EqEq),
                    "<>" => Some(BinaryOperator::NotEq),
                    "!=" => Some(BinaryOperator::BangEq),
                    "<" => Some(BinaryOperator::Lt),
                    "<=" => Some(BinaryOperator::LtEq),
                    ">" => Some(BinaryOperator::Gt),
                    ">=" => Some(BinaryOperator::GtEq),
                    _ => None,
                };
                if let Some(op) = op {
                    self.advance();
                    if self.peek_kw("ANY") || self.peek_kw("ALL") || self.peek_kw("SOME") {
                        return Err(self.unsupported("quantified comparison (ANY/ALL/SOME)"));
                    }
                    let right = self.parse_additive()?;
                    left = binary(left, op, right);
                    continue;
                }
                break;
            }
            if self.eat_kw("IS") {
                let negated = self.eat_kw("NOT");
                if !self.eat_kw("NULL") {
                    if self.peek_kw("DISTINCT") {
                        return Err(self.unsupported("IS DISTINCT FROM"));
                    }
                    return Err(self.unexpected("NULL"));
                }
                left = Expr::IsNull {
                    expr: Box::new(left),
                    negated,
                };
                continue;
            }
            if self.peek_kw("NOTNULL") || self.peek_kw("ISNULL") {
                return Err(self.unsupported("postfix ISNULL/NOTNULL"));
            }
            let negated = if self.peek_kw("NOT")
                && (self.peek_at(1).is_keyword("IN")
                    || self.peek_at(1).is_keyword("LIKE")
                    || self.peek_at(1).is_keyword("GLOB")
                    || self.peek_at(1).is_keyword("BETWEEN"))
            {
                self.advance();
                true
            } else {
                false
            };
            if self.eat_kw("IN") {
                self.expect_symbol("(")?;
                if self.starts_query() {
                    let q = self.parse_query()?;
                    self.expect_symbol(")")?;
                    left = Expr::InSubquery {
                        expr: Box::new(left),
                        subquery: Box::new(q),
                        negated,
                    };
                } else {
                    let mut list = Vec::new();
                    if !self.peek().is_symbol(")") {
                        loop {
                            list.push(self.parse_expr()?);
                            if !self.eat_symbol(",") {
                                break;
                            }
                        }
                    }
                    self.expect_symbol(")")?;
                    left = Expr::InList {
                        expr: Box::new(left),
                        list,
                        negated,
                    };
                }
                continue;
            }
            let like = if self.eat_kw("LIKE") {
                Some(LikeOperator::Like)
            } else if self.eat_kw("GLOB") {
                Some(LikeOperator::Glob)
            } else {
                None
            };
            if let Some(op) = like {
                let pattern = self.parse_additive()?;
                let escape = if self.eat_kw("ESCAPE") {
                    Some(Box::new(self.parse_additive()?))
                } else {
                    None
                };
                left = Expr::Like {
                    op,
                    expr: Box::new(left),
                    pattern: Box::new(pattern),
                    escape,
                    negated,
                };
                continue;
            }
            if self.eat_kw("BETWEEN") {
                let low = self.parse_additive()?;
                self.expect_kw("AND")?;
                let high = self.parse_additive()?;
                left = Expr::Between {
                    expr: Box::new(left),
                    negated,
                    low: Box::new(low),
                    high: Box::new(high),
                };
                continue;
            }
            if negated {
                return Err(self.unexpected("IN, LIKE, GLOB or BETWEEN"));
            }
            break;
        }
        Ok(left)
    }

    fn parse_additive(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_multiplicative()?;
        loop {
            let op = if self.peek().is_symbol("+") {
                BinaryOperator::Plus
            } else if self.peek().is_symbol("-") {
                BinaryOperator::Minus
            } else {
                break;
            };
            self.advance();
            let right = self.parse_multiplicative()?;
            left = binary(left, op, right);
        }
        Ok(left)
    }

    fn parse_multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_concat()?;
        loop {
            let op = if self.peek().is_symbol("*") {
                BinaryOperator::Multiply
            } else if self.peek().is_symbol("/") {
                BinaryOperator::Divide
            } else if self.peek().is_symbol("%") {
                BinaryOperator::Modulo
            } else {
                break;
            };
            self.advance();
            let right = self.parse_concat()?;
            left = binary(left, op, right);
        }
        Ok(left)
    }

    fn parse_concat(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.parse_unary()?;
        while self.eat_symbol("||") {
            let right = self.parse_unary()?;
            left = binary(left, BinaryOperator::Concat, right);
        }
        Ok(left)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        let op = if self.peek().is_symbol("-") {
            UnaryOperator::Minus
        } else if self.peek().is_symbol("+") {
            UnaryOperator::Plus
        } else {
            return self.parse_primary();
        };
        self.advance();
        let expr = self.parse_unary()?;
        Ok(Expr::UnaryOp {
            op,
            expr: Box::new(expr),
        })
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.peek().clone();
        match &tok.kind {
            TokenKind::Number(n) => {
                self.advance();
                Ok(Expr::Literal(Literal::Number(n.clone())))
            }
            TokenKind::String(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::String(s.clone())))
            }
            TokenKind::Symbol("(") => {
                self.advance();
                if self.starts_query() {
                    let q = self.parse_query()?;
                    self.expect_symbol(")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let inner = self.parse_expr()?;
                if self.peek().is_symbol(",") {
                    return Err(self.unsupported("row value constructor"));
                }
                self.expect_symbol(")")?;
                Ok(Expr::Nested(Box::new(inner)))
            }
            TokenKind::Word(w) => {
                let upper = w.to_ascii_uppercase();
                match upper.as_str() {
                    "NULL" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Null))
                    }
                    "TRUE" | "FALSE" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Boolean(upper == "TRUE")))
                    }
                    "EXISTS" => self.parse_exists(false),
                    "NOT" => {
                        // Only reached for NOT EXISTS; plain NOT is handled above.
                        self.advance();
                        self.parse_exists(true)
                    }
                    "CASE" => self.parse_case(),
                    "CAST" => self.parse_cast(),
                    "DATE" | "TIME" | "TIMESTAMP"
                        if matches!(self.peek_at(1).kind, TokenKind::String(_)) =>
                    {
                        self.advance();
                        let TokenKind::String(value) = self.advance().kind else {
                            unreachable!()
                        };
                        Ok(Expr::TypedString {
                            data_type: upper,
                            value,
                        })
                    }
                    "INTERVAL" => Err(self.unsupported("INTERVAL literal")),
                    _ if KEYWORD_FUNCTIONS.contains(&upper.as_str())
                        && self.peek_at(1).is_symbol("(") =>
                    {
                        self.advance();
                        let name = ObjectName(vec![Ident {
                            value: w.clone(),
                            quote: None,
                        }]);
                        self.parse_function(name)
                    }
                    _ if is_reserved(w) => Err(self.unexpected("expression")),
                    _ => self.parse_identifier_expr(),
                }
            }
            TokenKind::QuotedIdent { .. } => self.parse_identifier_expr(),
            _ => Err(self.unexpected("expression")),
        }
    }

    fn parse_exists(&mut self, negated: bool) -> Result<Expr, ParseError> {
        self.expect_kw("EXISTS")?;
        self.expect_symbol("(")?;
        let q = self.parse_query()?;
        self.expect_symbol(")")?;
        Ok(Expr::Exists {
            subquery: Box::new(q),
            negated,
        })
    }

    fn parse_identifier_expr(&mut self) -> Result<Expr, ParseError> {
        let first = self.parse_ident()?;
        let mut parts = vec![first];
        while self.peek().is_symbol(".") && !self.peek_at(1).is_symbol("*") {
            self.advance();
            parts.push(self.parse_ident()?);
        }
        if self.peek().is_symbol("(") {
            return self.parse_function(ObjectName(parts));
        }
        if parts.len() == 1 {
            Ok(Expr::Identifier(parts.pop().unwrap()))
        } else {
            Ok(Expr::CompoundIdentifier(parts))
        }
    }

    fn parse_function(&mut self, name: ObjectName) -> Result<Expr, ParseError> {
        self.expect_symbol("(")?;
        let args = if self.eat_symbol("*") {
            FunctionArgs::Star
        } else {
            let distinct = self.eat_kw("DISTINCT");
            let mut args = Vec::new();
            if !self.peek().is_symbol(")") {
                loop {
                    args.push(self.parse_expr()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
            }
            FunctionArgs::List { distinct, args }
        };
        if self.peek_kw("ORDER") {
            return Err(self.unsupported("ORDER BY inside aggregate call"));
        }
        self.expect_symbol(")")?;
        if self.peek_kw("FILTER") {
            return Err(self.unsupported("aggregate FILTER clause"));
        }
        if self.peek_kw("WITHIN") {
            return Err(self.unsupported("WITHIN GROUP clause"));
        }
        let over = if self.eat_kw("OVER") {
            Some(self.parse_window_spec()?)
        } else {
            None
        };
        Ok(Expr::Function { name, args, over })
    }

    fn parse_window_spec(&mut self) -> Result<WindowSpec, ParseError> {
        if !self.peek().is_symbol("(") {
            return Ok(WindowSpec::Named(self.parse_ident()?));
        }
        self.advance();
        let mut partition_by = Vec::new();
        if self.peek_kw("PARTITION") {
            self.advance();
            self.expect_kw("BY")?;
            loop {
                partition_by.push(self.parse_expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let mut order_by = Vec::new();
        if self.peek_kw("ORDER") {
            self.advance();
            self.expect_kw("BY")?;
            order_by = self.parse_order_items()?;
        }
        // Frame clause: kept as a token run up to the closing parenthesis.
        let mut frame = Vec::new();
        let mut depth = 0usize;
        loop {
            let tok = self.peek().clone();
            match &tok.kind {
                TokenKind::Eof => return Err(self.unexpected("\")\"")),
                TokenKind::Symbol(")") if depth == 0 => break,
                TokenKind::Symbol("(") => depth += 1,
                TokenKind::Symbol(")") => depth -= 1,
                _ => {}
            }
            frame.push(match &tok.kind {
                TokenKind::Word(w) => w.to_ascii_uppercase(),
                _ => tok.text(),
            });
            self.advance();
        }
        self.expect_symbol(")")?;
        Ok(WindowSpec::Inline {
            partition_by,
            order_by,
            frame,
        })
    }

    fn parse_case(&mut self) -> Result<Expr, ParseError> {
        self.expect_kw("CASE")?;
        let operand = if self.peek_kw("WHEN") {
            None
        } else {
            Some(Box::new(self.parse_expr()?))
        };
        let mut branches = Vec::new();
        while self.eat_kw("WHEN") {
            let cond = self.parse_expr()?;
            self.expect_kw("THEN")?;
            let result = self.parse_expr()?;
            branches.push((cond, result));
        }
        if branches.is_empty() {
            return Err(self.unexpected("WHEN"));
        }
        let else_result = if self.eat_kw("ELSE") {
            Some(Box::new(self.parse_expr()?))
        } else {
            None
        };
        self.expect_kw("END")?;
        Ok(Expr::Case {
            operand,
            branches,
            else_result,
        })
    }

    fn parse_cast(&mut self) -> Result<Expr, ParseError> {
        self.expect_kw("CAST")?;
        self.expect_symbol("(")?;
        let expr = self.parse_expr()?;
        self.expect_kw("AS")?;
        let data_type = self.parse_type_name()?;
        self.expect_symbol(")")?;
        Ok(Expr::Cast {
            expr: Box::new(expr),
            data_type,
        })
    }

    fn parse_type_name(&mut self) -> Result<String, ParseError> {
        let mut words = Vec::new();
        while let TokenKind::Word(w) = &self.peek().kind {
            words.push(w.to_ascii_uppercase());
            self.advance();
        }
        if words.is_empty() {
            return Err(self.unexpected("type name"));
        }
        let mut out = words.join(" ");
        if self.eat_symbol("(") {
            let mut args = Vec::new();
            loop {
                let TokenKind::Number(n) = self.peek().kind.clone() else {
                    return Err(self.unexpected("type length"));
                };
                self.advance();
                args.push(n);
                if !self.eat_symbol(",") {
                    break;
                }
            }
            self.expect_symbol(")")?;
            out.push('(');
            out.push_str(&args.join(", "));
            out.push(')');
        }
        Ok(out)
    }
}

fn binary(left: Expr, op: BinaryOperator, right: Expr) -> Expr {
    Expr::BinaryOp {
        left: Box::new(left),
        op,
        right: Box::new(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(sql: &str) -> SqlAst {
        parse_sql(sql, Dialect::Generic).unwrap_or_else(|e| panic!("{sql}: {e}"))
    }

    #[test]
    fn minimal_select() {
        let ast = parse("SELECT 1");
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        assert_eq!(s.projection.len(), 1);
        assert!(s.from.is_empty());
    }

    #[test]
    fn misspelled_keyword_reports_token() {
        let err = parse_sql("SELEC 1", Dialect::Generic).unwrap_err();
        assert_eq!(err.token(), Some("\"SELEC\""));
        assert_eq!(err.location(), Some(Location { line: 1, column: 1 }));
    }

    #[test]
    fn dml_is_unsupported_not_malformed() {
        let err = parse_sql("UPDATE t SET a = 1", Dialect::Generic).unwrap_err();
        assert!(matches!(err, ParseError::UnsupportedConstruct { ref construct, .. } if construct == "UPDATE statement"));
    }

    #[test]
    fn error_location_points_at_offending_token() {
        let err = parse_sql("SELECT a\nFROM t WHERE", Dialect::Generic).unwrap_err();
        assert_eq!(err.location(), Some(Location { line: 2, column: 13 }));
    }

    #[test]
    fn implicit_aliases() {
        let ast = parse("SELECT a x FROM t u");
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        assert!(matches!(&s.projection[0], SelectItem::Expr { alias: Some(a), .. } if a.value == "x"));
        assert!(matches!(&s.from[0].relation, TableFactor::Table { alias: Some(a), .. } if a.value == "u"));
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let ast = parse("SELECT 1 FROM t WHERE a = 1 OR b = 2 AND c = 3");
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        let Some(Expr::BinaryOp { op, right, .. }) = &s.selection else {
            panic!()
        };
        assert_eq!(*op, BinaryOperator::Or);
        assert!(matches!(**right, Expr::BinaryOp { op: BinaryOperator::And, .. }));
    }

    #[test]
    fn between_does_not_swallow_and() {
        let ast = parse("SELECT 1 FROM t WHERE a BETWEEN 1 AND 2 AND b = 3");
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        assert!(matches!(
            s.selection,
            Some(Expr::BinaryOp { op: BinaryOperator::And, .. })
        ));
    }

    #[test]
    fn set_operations_are_left_associative() {
        let ast = parse("SELECT a FROM t UNION SELECT a FROM u EXCEPT SELECT a FROM v");
        let SetExpr::SetOperation { op, left, .. } = &ast.query.body else {
            panic!()
        };
        assert_eq!(*op, SetOperator::Except);
        assert!(matches!(**left, SetExpr::SetOperation { op: SetOperator::Union, .. }));
    }

    #[test]
    fn not_exists_is_negated_exists() {
        let ast = parse("SELECT 1 WHERE NOT EXISTS (SELECT 1)");
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        assert!(matches!(s.selection, Some(Expr::Exists { negated: true, .. })));
    }

    #[test]
    fn window_function_parsed_with_opaque_frame() {
        let ast = parse(
            "SELECT SUM(x) OVER (PARTITION BY g ORDER BY d ROWS BETWEEN 1 PRECEDING AND CURRENT ROW) FROM t",
        );
        let SetExpr::Select(s) = &ast.query.body else {
            panic!()
        };
        let SelectItem::Expr {
            expr: Expr::Function { over: Some(WindowSpec::Inline { frame, .. }), .. },
            ..
        } = &s.projection[0]
        else {
            panic!()
        };
        assert_eq!(frame.join(" "), "ROWS BETWEEN 1 PRECEDING AND CURRENT ROW");
    }

    #[test]
    fn dialect_gated_constructs() {
        assert!(matches!(
            parse_sql("SELECT a FROM t MINUS SELECT a FROM u", Dialect::Generic),
            Err(ParseError::UnsupportedConstruct { .. })
        ));
        assert!(parse_sql("SELECT a FROM t MINUS SELECT a FROM u", Dialect::MitWarehouse).is_ok());
        assert!(matches!(
            parse_sql("SELECT a FROM t LIMIT 5", Dialect::MitWarehouse),
            Err(ParseError::UnsupportedConstruct { .. })
        ));
        assert!(parse_sql("SELECT a FROM t FETCH FIRST 5 ROWS ONLY", Dialect::MitWarehouse).is_ok());
        assert!(parse_sql("SELECT a FROM t LIMIT 2, 5", Dialect::Sqlite).is_ok());
        assert!(parse_sql("SELECT a FROM t LIMIT 2, 5", Dialect::Generic).is_err());
    }

    #[test]
    fn empty_and_comment_only_input() {
        assert_eq!(parse_sql("  ", Dialect::Generic), Err(ParseError::Empty));
        assert_eq!(parse_sql("-- nothing", Dialect::Generic), Err(ParseError::Empty));
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(matches!(
            parse_sql("SELECT 1 FROM t t2 t3", Dialect::Generic),
            Err(ParseError::Syntax { .. })
        ));
    }
}
