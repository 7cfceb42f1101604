//! Tokenizer. Comments are dropped here, so nothing downstream sees them.

use super::ast::Dialect;
use super::error::{Location, ParseError};

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    /// Bare word: keyword or identifier, decided by the parser.
    Word(String),
    QuotedIdent { value: String, quote: char },
    Number(String),
    /// Raw contents of a single-quoted string.
    String(String),
    Symbol(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub location: Location,
}

impl Token {
    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    pub fn is_symbol(&self, sym: &str) -> bool {
        matches!(&self.kind, TokenKind::Symbol(s) if *s == sym)
    }

    /// Human-readable token text for diagnostics.
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::Word(w) => format!("\"{w}\""),
            TokenKind::QuotedIdent { value, quote } => {
                let close = closing_quote(*quote);
                format!("{quote}{value}{close}")
            }
            TokenKind::Number(n) => n.clone(),
            TokenKind::String(s) => format!("'{s}'"),
            TokenKind::Symbol(s) => format!("\"{s}\""),
            TokenKind::Eof => "end of input".to_string(),
        }
    }

    /// Token text without decoration, as it appeared in the source.
    pub fn text(&self) -> String {
        match &self.kind {
            TokenKind::Word(w) => w.clone(),
            TokenKind::QuotedIdent { value, quote } => {
                format!("{quote}{value}{}", closing_quote(*quote))
            }
            TokenKind::Number(n) => n.clone(),
            TokenKind::String(s) => format!("'{s}'"),
            TokenKind::Symbol(s) => (*s).to_string(),
            TokenKind::Eof => String::new(),
        }
    }
}

pub fn closing_quote(open: char) -> char {
    match open {
        '[' => ']',
        other => other,
    }
}

const SYMBOLS: &[&str] = &[
    "<>", "<=", ">=", "!=", "==", "||", "(", ")", ",", ";", ".", "=", "<", ">", "+", "-", "*", "/",
    "%",
];

pub fn tokenize(text: &str, dialect: Dialect) -> Result<Vec<Token>, ParseError> {
    Lexer::new(text, dialect).run()
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
    dialect: Dialect,
}

impl Lexer {
    fn new(src: &str, dialect: Dialect) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
            dialect,
        }
    }

    fn peek(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn location(&self) -> Location {
        Location {
            line: self.line,
            column: self.column,
        }
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            let location = self.location();
            let Some(c) = self.peek(0) else {
                out.push(Token {
                    kind: TokenKind::Eof,
                    location,
                });
                return Ok(out);
            };
            let kind = if c.is_alphabetic() || c == '_' {
                TokenKind::Word(self.take_while(|c| c.is_alphanumeric() || c == '_' || c == '$'))
            } else if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|d| d.is_ascii_digit())) {
                TokenKind::Number(self.number())
            } else if c == '\'' {
                TokenKind::String(self.quoted('\'', location)?)
            } else if c == '"' {
                TokenKind::QuotedIdent {
                    value: self.quoted('"', location)?,
                    quote: '"',
                }
            } else if c == '`' || c == '[' {
                if self.dialect != Dialect::Sqlite {
                    let construct = if c == '`' {
                        "backtick-quoted identifier"
                    } else {
                        "bracket-quoted identifier"
                    };
                    return Err(ParseError::UnsupportedConstruct {
                        location,
                        construct: construct.to_string(),
                    });
                }
                TokenKind::QuotedIdent {
                    value: self.quoted(c, location)?,
                    quote: c,
                }
            } else if let Some(sym) = self.symbol() {
                TokenKind::Symbol(sym)
            } else {
                return Err(ParseError::Syntax {
                    location,
                    token: format!("\"{c}\""),
                    expected: "a SQL token".to_string(),
                });
            };
            out.push(Token { kind, location });
        }
    }

    fn skip_trivia(&mut self) -> Result<(), ParseError> {
        loop {
            match (self.peek(0), self.peek(1)) {
                (Some(c), _) if c.is_whitespace() => {
                    self.bump();
                }
                (Some('-'), Some('-')) => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                (Some('/'), Some('*')) => {
                    let start = self.location();
                    self.bump();
                    self.bump();
                    loop {
                        match (self.peek(0), self.peek(1)) {
                            (Some('*'), Some('/')) => {
                                self.bump();
                                self.bump();
                                break;
                            }
                            (Some(_), _) => {
                                self.bump();
                            }
                            (None, _) => {
                                return Err(ParseError::Syntax {
                                    location: start,
                                    token: "\"/*\"".to_string(),
                                    expected: "end of block comment".to_string(),
                                })
                            }
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek(0) {
            if !pred(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn number(&mut self) -> String {
        let mut s = self.take_while(|c| c.is_ascii_digit());
        if self.peek(0) == Some('.') {
            s.push('.');
            self.bump();
            s.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        if matches!(self.peek(0), Some('e' | 'E')) {
            let sign = self.peek(1);
            let digit_at = if matches!(sign, Some('+' | '-')) { 2 } else { 1 };
            if self.peek(digit_at).is_some_and(|d| d.is_ascii_digit()) {
                for _ in 0..digit_at {
                    s.push(self.bump().unwrap());
                }
                s.push_str(&self.take_while(|c| c.is_ascii_digit()));
            }
        }
        s
    }

    /// Reads a delimited run; a doubled closing quote is kept verbatim as an escape.
    fn quoted(&mut self, open: char, start: Location) -> Result<String, ParseError> {
        let close = closing_quote(open);
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                Some(c) if c == close => {
                    if self.peek(0) == Some(close) && open != '[' {
                        s.push(close);
                        s.push(close);
                        self.bump();
                    } else {
                        return Ok(s);
                    }
                }
                Some(c) => s.push(c),
                None => {
                    return Err(ParseError::Syntax {
                        location: start,
                        token: format!("\"{open}\""),
                        expected: format!("closing {close}"),
                    })
                }
            }
        }
    }

    fn symbol(&mut self) -> Option<&'static str> {
        let two: String = [self.peek(0), self.peek(1)].iter().flatten().collect();
        for sym in SYMBOLS {
            let matched = if sym.len() == 2 {
                two == *sym
            } else {
                self.peek(0).is_some_and(|c| sym.starts_with(c))
            };
            if matched {
                for _ in 0..sym.chars().count() {
                    self.bump();
                }
                return Some(sym);
            }
        }
        None
    }
}
