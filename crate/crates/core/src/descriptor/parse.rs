//! Lexer and recursive-descent parser for descriptor text.

use std::fmt;

use super::{BinOp, Descriptor, Expr};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnterminatedString,
    BadEscape(char),
    IntegerOutOfRange,
    RealOutOfRange,
    UnexpectedToken { found: String, expected: String },
    UnexpectedEnd { expected: String },
    DuplicateAttribute(String),
    ReservedWord(String),
}

/// Syntax error with 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: ", self.line, self.col)?;
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::UnterminatedString => write!(f, "unterminated string literal"),
            ParseErrorKind::BadEscape(c) => write!(f, "unknown string escape \\{c}"),
            ParseErrorKind::IntegerOutOfRange => write!(f, "integer literal out of range"),
            ParseErrorKind::RealOutOfRange => write!(f, "real literal out of range"),
            ParseErrorKind::UnexpectedToken { found, expected } => {
                write!(f, "expected {expected}, found {found}")
            }
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "expected {expected}, found end of input")
            }
            ParseErrorKind::DuplicateAttribute(name) => {
                write!(f, "duplicate attribute `{name}`")
            }
            ParseErrorKind::ReservedWord(word) => {
                write!(f, "`{word}` is a reserved word")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    True,
    False,
    Other,
    Member,
    Assign,
    Semi,
    Comma,
    Dot,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Bang,
    AndAnd,
    OrOr,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(name) => format!("identifier `{name}`"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Real(r) => format!("real {r}"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::True => "`true`".to_string(),
            Tok::False => "`false`".to_string(),
            Tok::Other => "`other`".to_string(),
            Tok::Member => "`member`".to_string(),
            Tok::Assign => "`=`".to_string(),
            Tok::Semi => "`;`".to_string(),
            Tok::Comma => "`,`".to_string(),
            Tok::Dot => "`.`".to_string(),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::LBracket => "`[`".to_string(),
            Tok::RBracket => "`]`".to_string(),
            Tok::Bang => "`!`".to_string(),
            Tok::AndAnd => "`&&`".to_string(),
            Tok::OrOr => "`||`".to_string(),
            Tok::EqEq => "`==`".to_string(),
            Tok::NotEq => "`!=`".to_string(),
            Tok::Lt => "`<`".to_string(),
            Tok::Le => "`<=`".to_string(),
            Tok::Gt => "`>`".to_string(),
            Tok::Ge => "`>=`".to_string(),
            Tok::Plus => "`+`".to_string(),
            Tok::Minus => "`-`".to_string(),
            Tok::Star => "`*`".to_string(),
            Tok::Slash => "`/`".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            chars: text.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            kind,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn tokenize(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and # comments.
            loop {
                match self.chars.peek() {
                    Some(c) if c.is_whitespace() => {
                        self.bump();
                    }
                    Some('#') => {
                        while let Some(&c) = self.chars.peek() {
                            if c == '\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let (line, col) = (self.line, self.col);
            let c = match self.chars.peek() {
                None => return Ok(out),
                Some(&c) => c,
            };
            let tok = if c.is_ascii_alphabetic() || c == '_' {
                let mut word = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
                match word.to_ascii_lowercase().as_str() {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "other" => Tok::Other,
                    "member" => Tok::Member,
                    _ => Tok::Ident(word),
                }
            } else if c.is_ascii_digit() {
                self.number()?
            } else if c == '"' {
                self.string()?
            } else {
                self.bump();
                match c {
                    '=' => {
                        if self.chars.peek() == Some(&'=') {
                            self.bump();
                            Tok::EqEq
                        } else {
                            Tok::Assign
                        }
                    }
                    '!' => {
                        if self.chars.peek() == Some(&'=') {
                            self.bump();
                            Tok::NotEq
                        } else {
                            Tok::Bang
                        }
                    }
                    '<' => {
                        if self.chars.peek() == Some(&'=') {
                            self.bump();
                            Tok::Le
                        } else {
                            Tok::Lt
                        }
                    }
                    '>' => {
                        if self.chars.peek() == Some(&'=') {
                            self.bump();
                            Tok::Ge
                        } else {
                            Tok::Gt
                        }
                    }
                    '&' => {
                        if self.chars.peek() == Some(&'&') {
                            self.bump();
                            Tok::AndAnd
                        } else {
                            return Err(ParseError {
                                line,
                                col,
                                kind: ParseErrorKind::UnexpectedChar('&'),
                            });
                        }
                    }
                    '|' => {
                        if self.chars.peek() == Some(&'|') {
                            self.bump();
                            Tok::OrOr
                        } else {
                            return Err(ParseError {
                                line,
                                col,
                                kind: ParseErrorKind::UnexpectedChar('|'),
                            });
                        }
                    }
                    ';' => Tok::Semi,
                    ',' => Tok::Comma,
                    '.' => Tok::Dot,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    c => {
                        return Err(ParseError {
                            line,
                            col,
                            kind: ParseErrorKind::UnexpectedChar(c),
                        })
                    }
                }
            };
            out.push(Spanned { tok, line, col });
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let mut text = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        let mut is_real = false;
        if self.chars.peek() == Some(&'.') {
            // Only treat the dot as a fraction when a digit follows, so
            // it stays available for `other.attr`.
            let mut ahead = self.chars.clone();
            ahead.next();
            if ahead.peek().is_some_and(|c| c.is_ascii_digit()) {
                is_real = true;
                text.push('.');
                self.bump();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() {
                        text.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
        }
        if matches!(self.chars.peek(), Some('e') | Some('E')) {
            let mut ahead = self.chars.clone();
            ahead.next();
            let mut next = ahead.peek().copied();
            if next == Some('+') || next == Some('-') {
                ahead.next();
                next = ahead.peek().copied();
            }
            if next.is_some_and(|c| c.is_ascii_digit()) {
                is_real = true;
                text.push('e');
                self.bump();
                if matches!(self.chars.peek(), Some('+') | Some('-')) {
                    text.push(*self.chars.peek().unwrap());
                    self.bump();
                }
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() {
                        text.push(c);
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
        }
        if is_real {
            let value: f64 = text
                .parse()
                .map_err(|_| self.err(ParseErrorKind::RealOutOfRange))?;
            if !value.is_finite() {
                return Err(self.err(ParseErrorKind::RealOutOfRange));
            }
            Ok(Tok::Real(value))
        } else {
            let value: i64 = text
                .parse()
                .map_err(|_| self.err(ParseErrorKind::IntegerOutOfRange))?;
            Ok(Tok::Int(value))
        }
    }

    fn string(&mut self) -> Result<Tok, ParseError> {
        self.bump(); // opening quote
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(ParseErrorKind::UnterminatedString)),
                Some('"') => return Ok(Tok::Str(out)),
                Some('\\') => match self.bump() {
                    None => return Err(self.err(ParseErrorKind::UnterminatedString)),
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => return Err(self.err(ParseErrorKind::BadEscape(c))),
                },
                Some(c) => out.push(c),
            }
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end_line: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, expected: &str) -> ParseError {
        match self.toks.get(self.pos) {
            Some(s) => ParseError {
                line: s.line,
                col: s.col,
                kind: ParseErrorKind::UnexpectedToken {
                    found: s.tok.describe(),
                    expected: expected.to_string(),
                },
            },
            None => ParseError {
                line: self.end_line,
                col: self.end_col,
                kind: ParseErrorKind::UnexpectedEnd {
                    expected: expected.to_string(),
                },
            },
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err_here(expected))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Tok::OrOr) {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp_expr()?;
        while self.peek() == Some(&Tok::AndAnd) {
            self.pos += 1;
            let rhs = self.cmp_expr()?;
            lhs = Expr::binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    // Comparisons do not chain: `a < b < c` is a syntax error.
    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Some(Tok::EqEq) => BinOp::Eq,
            Some(Tok::NotEq) => BinOp::Ne,
            Some(Tok::Lt) => BinOp::Lt,
            Some(Tok::Le) => BinOp::Le,
            Some(Tok::Gt) => BinOp::Gt,
            Some(Tok::Ge) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.add_expr()?;
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.mul_expr()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::negated(self.unary()?))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let spanned = match self.next() {
            Some(s) => s,
            None => return Err(self.err_here("an expression")),
        };
        match spanned.tok {
            Tok::Int(i) => Ok(Expr::Int(i)),
            Tok::Real(r) => Ok(Expr::Real(r)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::True => Ok(Expr::Bool(true)),
            Tok::False => Ok(Expr::Bool(false)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::LBracket => {
                let mut items = Vec::new();
                if self.peek() == Some(&Tok::RBracket) {
                    self.pos += 1;
                    return Ok(Expr::List(items));
                }
                loop {
                    items.push(self.expr()?);
                    match self.peek() {
                        Some(Tok::Comma) => {
                            self.pos += 1;
                        }
                        Some(Tok::RBracket) => {
                            self.pos += 1;
                            return Ok(Expr::List(items));
                        }
                        _ => return Err(self.err_here("`,` or `]`")),
                    }
                }
            }
            Tok::Member => {
                self.expect(Tok::LParen, "`(`")?;
                let list = self.expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let value = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::member(list, value))
            }
            Tok::Other => {
                self.expect(Tok::Dot, "`.` after `other`")?;
                match self.next() {
                    Some(Spanned {
                        tok: Tok::Ident(name),
                        ..
                    }) => Ok(Expr::OtherAttr(name)),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        Err(self.err_here("an attribute name"))
                    }
                }
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::Dot) {
                    // Scopes beyond self/other are not part of the language.
                    return Err(ParseError {
                        line: spanned.line,
                        col: spanned.col,
                        kind: ParseErrorKind::UnexpectedToken {
                            found: format!("scoped reference `{name}.`"),
                            expected: "`other.<attr>` or a plain attribute".to_string(),
                        },
                    });
                }
                Ok(Expr::Attr(name))
            }
            tok => Err(ParseError {
                line: spanned.line,
                col: spanned.col,
                kind: ParseErrorKind::UnexpectedToken {
                    found: tok.describe(),
                    expected: "an expression".to_string(),
                },
            }),
        }
    }
}

pub(super) fn parse_descriptor(text: &str) -> Result<Descriptor, ParseError> {
    let lexer = Lexer::new(text);
    let end_line = text.lines().count().max(1);
    let end_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
    let toks = lexer.tokenize()?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end_line,
        end_col,
    };
    let mut descriptor = Descriptor::new();
    while let Some(tok) = parser.peek() {
        let (line, col) = {
            let s = &parser.toks[parser.pos];
            (s.line, s.col)
        };
        let name = match tok {
            Tok::Ident(name) => name.clone(),
            Tok::True | Tok::False | Tok::Other | Tok::Member => {
                return Err(ParseError {
                    line,
                    col,
                    kind: ParseErrorKind::ReservedWord(tok.describe()),
                })
            }
            _ => return Err(parser.err_here("an attribute name")),
        };
        parser.pos += 1;
        parser.expect(Tok::Assign, "`=`")?;
        let expr = parser.expr()?;
        parser.expect(Tok::Semi, "`;`")?;
        if descriptor.contains(&name) {
            return Err(ParseError {
                line,
                col,
                kind: ParseErrorKind::DuplicateAttribute(name),
            });
        }
        descriptor.set(&name, expr);
    }
    Ok(descriptor)
}

/// Parse a single expression (no trailing `;`), used for requirement
/// snippets in configuration files.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    let lexer = Lexer::new(text);
    let end_line = text.lines().count().max(1);
    let end_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
    let toks = lexer.tokenize()?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end_line,
        end_col,
    };
    let expr = parser.expr()?;
    if parser.peek().is_some() {
        return Err(parser.err_here("end of expression"));
    }
    Ok(expr)
}
