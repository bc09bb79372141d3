//! Descriptor language: parse, evaluate, and symmetrically match the
//! attribute/expression documents that describe both tasks and resources.
//!
//! The language is a closed classified-advertisement subset: literals
//! (boolean, integer, real, string, list), attribute references (`Attr`
//! resolves in the descriptor being evaluated, `other.Attr` in the
//! counterpart), boolean/arithmetic/comparison operators, and
//! `member(list, value)`. Evaluation is total: anything that cannot be
//! given a value yields `Value::Undefined` instead of failing, and the
//! only hard error is blowing the attribute-resolution depth limit.

use std::fmt;

use indexmap::IndexMap;

mod parse;

pub use parse::{parse_expression, ParseError, ParseErrorKind};

/// Attribute-reference resolution depth limit; exceeding it is an error.
pub const RESOLUTION_DEPTH_LIMIT: usize = 32;

/// Runtime value of an expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<Value>),
    Undefined,
}

impl Value {
    pub fn is_true(&self) -> bool {
        matches!(self, Value::Bool(true))
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, Value::Undefined)
    }

    /// Three-valued boolean view: defined booleans map to `Some`,
    /// everything else (including non-booleans) behaves as undefined.
    fn truth(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    fn as_real(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div => 5,
        }
    }
}

/// Expression tree of the descriptor language.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
    List(Vec<Expr>),
    /// Reference resolved in the descriptor under evaluation.
    Attr(String),
    /// Reference resolved in the counterpart descriptor.
    OtherAttr(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Member(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn str(s: impl Into<String>) -> Expr {
        Expr::Str(s.into())
    }

    pub fn attr(name: impl Into<String>) -> Expr {
        Expr::Attr(name.into())
    }

    pub fn other(name: impl Into<String>) -> Expr {
        Expr::OtherAttr(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn member(list: Expr, value: Expr) -> Expr {
        Expr::Member(Box::new(list), Box::new(value))
    }

    /// Negation, folding numeric literals so that `-1` and `Neg(1)` have
    /// one canonical form (the parser builds through this too).
    pub fn negated(e: Expr) -> Expr {
        match e {
            Expr::Int(i) => match i.checked_neg() {
                Some(n) => Expr::Int(n),
                None => Expr::Neg(Box::new(Expr::Int(i))),
            },
            Expr::Real(r) => Expr::Real(-r),
            e => Expr::Neg(Box::new(e)),
        }
    }

    pub fn str_list(items: impl IntoIterator<Item = impl Into<String>>) -> Expr {
        Expr::List(items.into_iter().map(Expr::str).collect())
    }

    /// Left-associated conjunction; the empty conjunction is `true`.
    pub fn conj(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Bool(true),
            Some(first) => it.fold(first, |acc, t| Expr::binary(BinOp::And, acc, t)),
        }
    }

    /// Left-associated disjunction; the empty disjunction is `false`.
    pub fn disj(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Bool(false),
            Some(first) => it.fold(first, |acc, t| Expr::binary(BinOp::Or, acc, t)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Not(_) | Expr::Neg(_) => 6,
            _ => 7,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min {
            write!(f, "(")?;
        }
        match self {
            Expr::Bool(b) => write!(f, "{b}")?,
            Expr::Int(i) => write!(f, "{i}")?,
            Expr::Real(r) => write!(f, "{r:?}")?,
            Expr::Str(s) => write_quoted(f, s)?,
            Expr::List(items) => {
                write!(f, "[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    item.fmt_prec(f, 0)?;
                }
                write!(f, "]")?;
            }
            Expr::Attr(name) => write!(f, "{name}")?,
            Expr::OtherAttr(name) => write!(f, "other.{name}")?,
            Expr::Not(e) => {
                write!(f, "!")?;
                e.fmt_prec(f, 6)?;
            }
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 6)?;
            }
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                // comparisons do not chain, so both sides need parens at
                // comparison level
                let left_min = if p == 3 { p + 1 } else { p };
                l.fmt_prec(f, left_min)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_prec(f, p + 1)?;
            }
            Expr::Member(list, value) => {
                write!(f, "member(")?;
                list.fmt_prec(f, 0)?;
                write!(f, ", ")?;
                value.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if prec < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    write!(f, "\"")?;
    for c in s.chars() {
        match c {
            '"' => write!(f, "\\\"")?,
            '\\' => write!(f, "\\\\")?,
            '\n' => write!(f, "\\n")?,
            '\t' => write!(f, "\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    write!(f, "\"")
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    /// Attribute name as first written; lookups fold case.
    name: String,
    expr: Expr,
}

/// An ordered attribute → expression map. Attribute names are
/// case-insensitive and unique after case folding; entry order is
/// preserved for serialization.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Descriptor {
    entries: IndexMap<String, Entry>,
}

impl Descriptor {
    pub fn new() -> Descriptor {
        Descriptor::default()
    }

    /// Parse descriptor text: a sequence of `Name = expression;` entries.
    /// `#` starts a line comment.
    pub fn parse(text: &str) -> Result<Descriptor, ParseError> {
        parse::parse_descriptor(text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&fold(name))
    }

    pub fn get(&self, name: &str) -> Option<&Expr> {
        self.entries.get(&fold(name)).map(|e| &e.expr)
    }

    /// Insert or replace an attribute. A replaced attribute keeps its
    /// position and originally written name.
    pub fn set(&mut self, name: &str, expr: Expr) {
        match self.entries.get_mut(&fold(name)) {
            Some(entry) => entry.expr = expr,
            None => {
                self.entries.insert(
                    fold(name),
                    Entry {
                        name: name.to_string(),
                        expr,
                    },
                );
            }
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Expr> {
        self.entries.shift_remove(&fold(name)).map(|e| e.expr)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.entries.values().map(|e| (e.name.as_str(), &e.expr))
    }

    pub fn requirements(&self) -> Option<&Expr> {
        self.get("Requirements")
    }

    /// Evaluate the named attribute against this descriptor alone.
    pub fn get_value(&self, name: &str) -> Option<Value> {
        let expr = self.get(name)?;
        let empty = Descriptor::new();
        Some(evaluate(expr, self, &empty).unwrap_or(Value::Undefined))
    }

    pub fn get_str(&self, name: &str) -> Option<String> {
        match self.get_value(name)? {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn get_int(&self, name: &str) -> Option<i64> {
        match self.get_value(name)? {
            Value::Int(i) => Some(i),
            _ => None,
        }
    }

    pub fn get_bool(&self, name: &str) -> Option<bool> {
        match self.get_value(name)? {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn get_str_list(&self, name: &str) -> Option<Vec<String>> {
        match self.get_value(name)? {
            Value::List(items) => items
                .into_iter()
                .map(|v| match v {
                    Value::Str(s) => Some(s),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    }

    /// Canonical multi-line text; parses back to a structurally equal
    /// descriptor.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, expr) in self.iter() {
            out.push_str(&format!("{name} = {expr};\n"));
        }
        out
    }

    /// Same canonical form on a single line (string escapes keep it free
    /// of literal newlines and tabs), for line-oriented logs.
    pub fn to_line(&self) -> String {
        self.iter()
            .map(|(name, expr)| format!("{name} = {expr};"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn fold(name: &str) -> String {
    name.to_ascii_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("attribute reference depth limit exceeded while resolving `{0}`")]
    DepthLimit(String),
}

/// Evaluate `expr` with attribute references resolving in `own` and
/// `other.X` references resolving in `other` (with scopes swapped inside).
pub fn evaluate(expr: &Expr, own: &Descriptor, other: &Descriptor) -> Result<Value, EvalError> {
    eval(expr, own, other, 0)
}

fn eval(expr: &Expr, own: &Descriptor, other: &Descriptor, depth: usize) -> Result<Value, EvalError> {
    Ok(match expr {
        Expr::Bool(b) => Value::Bool(*b),
        Expr::Int(i) => Value::Int(*i),
        Expr::Real(r) => Value::Real(*r),
        Expr::Str(s) => Value::Str(s.clone()),
        Expr::List(items) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                out.push(eval(item, own, other, depth)?);
            }
            Value::List(out)
        }
        Expr::Attr(name) => {
            if depth >= RESOLUTION_DEPTH_LIMIT {
                return Err(EvalError::DepthLimit(name.clone()));
            }
            match own.get(name) {
                Some(e) => eval(e, own, other, depth + 1)?,
                None => Value::Undefined,
            }
        }
        Expr::OtherAttr(name) => {
            if depth >= RESOLUTION_DEPTH_LIMIT {
                return Err(EvalError::DepthLimit(name.clone()));
            }
            match other.get(name) {
                // The referenced attribute is evaluated in the other
                // descriptor's own scope, so self/other swap.
                Some(e) => eval(e, other, own, depth + 1)?,
                None => Value::Undefined,
            }
        }
        Expr::Not(e) => match eval(e, own, other, depth)?.truth() {
            Some(b) => Value::Bool(!b),
            None => Value::Undefined,
        },
        Expr::Neg(e) => match eval(e, own, other, depth)? {
            Value::Int(i) => i.checked_neg().map(Value::Int).unwrap_or(Value::Undefined),
            Value::Real(r) => finite(-r),
            _ => Value::Undefined,
        },
        Expr::Binary(BinOp::And, l, r) => {
            let lv = eval(l, own, other, depth)?.truth();
            if lv == Some(false) {
                return Ok(Value::Bool(false));
            }
            let rv = eval(r, own, other, depth)?.truth();
            match (lv, rv) {
                (_, Some(false)) => Value::Bool(false),
                (Some(true), Some(true)) => Value::Bool(true),
                _ => Value::Undefined,
            }
        }
        Expr::Binary(BinOp::Or, l, r) => {
            let lv = eval(l, own, other, depth)?.truth();
            if lv == Some(true) {
                return Ok(Value::Bool(true));
            }
            let rv = eval(r, own, other, depth)?.truth();
            match (lv, rv) {
                (_, Some(true)) => Value::Bool(true),
                (Some(false), Some(false)) => Value::Bool(false),
                _ => Value::Undefined,
            }
        }
        Expr::Binary(op, l, r) => {
            let lv = eval(l, own, other, depth)?;
            let rv = eval(r, own, other, depth)?;
            apply_binary(*op, &lv, &rv)
        }
        Expr::Member(list, value) => {
            let lv = eval(list, own, other, depth)?;
            let vv = eval(value, own, other, depth)?;
            match (lv, &vv) {
                (_, Value::Undefined) => Value::Undefined,
                (Value::List(items), _) => member_of(&items, &vv),
                _ => Value::Undefined,
            }
        }
    })
}

fn finite(r: f64) -> Value {
    if r.is_finite() {
        Value::Real(r)
    } else {
        Value::Undefined
    }
}

fn apply_binary(op: BinOp, l: &Value, r: &Value) -> Value {
    match op {
        BinOp::Eq => eq_values(l, r),
        BinOp::Ne => match eq_values(l, r) {
            Value::Bool(b) => Value::Bool(!b),
            v => v,
        },
        BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => compare(op, l, r),
        BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => arith(op, l, r),
        BinOp::And | BinOp::Or => unreachable!("handled with short-circuit"),
    }
}

/// Equality with numeric promotion; incompatible types are undefined, not
/// errors. Lists compare element-wise.
fn eq_values(l: &Value, r: &Value) -> Value {
    match (l, r) {
        (Value::Undefined, _) | (_, Value::Undefined) => Value::Undefined,
        (Value::Bool(a), Value::Bool(b)) => Value::Bool(a == b),
        (Value::Str(a), Value::Str(b)) => Value::Bool(a == b),
        (Value::List(a), Value::List(b)) => {
            if a.len() != b.len() {
                return Value::Bool(false);
            }
            let mut saw_undefined = false;
            for (x, y) in a.iter().zip(b) {
                match eq_values(x, y) {
                    Value::Bool(false) => return Value::Bool(false),
                    Value::Bool(true) => {}
                    _ => saw_undefined = true,
                }
            }
            if saw_undefined {
                Value::Undefined
            } else {
                Value::Bool(true)
            }
        }
        (Value::Int(a), Value::Int(b)) => Value::Bool(a == b),
        _ => match (l.as_real(), r.as_real()) {
            (Some(a), Some(b)) => Value::Bool(a == b),
            _ => Value::Undefined,
        },
    }
}

fn compare(op: BinOp, l: &Value, r: &Value) -> Value {
    let ord = match (l, r) {
        (Value::Int(a), Value::Int(b)) => a.partial_cmp(b),
        (Value::Str(a), Value::Str(b)) => a.partial_cmp(b),
        _ => match (l.as_real(), r.as_real()) {
            (Some(a), Some(b)) => a.partial_cmp(&b),
            _ => None,
        },
    };
    match ord {
        None => Value::Undefined,
        Some(ord) => Value::Bool(match op {
            BinOp::Lt => ord.is_lt(),
            BinOp::Le => ord.is_le(),
            BinOp::Gt => ord.is_gt(),
            BinOp::Ge => ord.is_ge(),
            _ => unreachable!(),
        }),
    }
}

/// Integer arithmetic stays integral (truncating division); mixed
/// operands promote to real. Division by zero, overflow, and non-finite
/// results are all undefined.
fn arith(op: BinOp, l: &Value, r: &Value) -> Value {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => {
            let out = match op {
                BinOp::Add => a.checked_add(*b),
                BinOp::Sub => a.checked_sub(*b),
                BinOp::Mul => a.checked_mul(*b),
                BinOp::Div => {
                    if *b == 0 {
                        None
                    } else {
                        a.checked_div(*b)
                    }
                }
                _ => unreachable!(),
            };
            out.map(Value::Int).unwrap_or(Value::Undefined)
        }
        _ => match (l.as_real(), r.as_real()) {
            (Some(a), Some(b)) => match op {
                BinOp::Add => finite(a + b),
                BinOp::Sub => finite(a - b),
                BinOp::Mul => finite(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        Value::Undefined
                    } else {
                        finite(a / b)
                    }
                }
                _ => unreachable!(),
            },
            _ => Value::Undefined,
        },
    }
}

fn member_of(items: &[Value], needle: &Value) -> Value {
    let mut saw_undefined = false;
    for item in items {
        match eq_values(item, needle) {
            Value::Bool(true) => return Value::Bool(true),
            Value::Bool(false) => {}
            _ => saw_undefined = true,
        }
    }
    if saw_undefined {
        Value::Undefined
    } else {
        Value::Bool(false)
    }
}

/// How one side of a symmetric match came out.
#[derive(Debug, Clone, PartialEq)]
pub enum MatchSide {
    /// No Requirements attribute: vacuously satisfied.
    Vacuous,
    True,
    False,
    /// Requirements evaluated to undefined or a non-boolean.
    Undefined,
    Error(EvalError),
}

impl MatchSide {
    pub fn satisfied(&self) -> bool {
        matches!(self, MatchSide::Vacuous | MatchSide::True)
    }
}

/// Both directions of a symmetric match, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDetail {
    /// `a.Requirements` evaluated with `other` = b.
    pub forward: MatchSide,
    /// `b.Requirements` evaluated with `other` = a.
    pub backward: MatchSide,
}

impl MatchDetail {
    pub fn matched(&self) -> bool {
        self.forward.satisfied() && self.backward.satisfied()
    }
}

fn match_side(own: &Descriptor, other: &Descriptor) -> MatchSide {
    match own.requirements() {
        None => MatchSide::Vacuous,
        Some(req) => match evaluate(req, own, other) {
            Ok(Value::Bool(true)) => MatchSide::True,
            Ok(Value::Bool(false)) => MatchSide::False,
            Ok(_) => MatchSide::Undefined,
            Err(e) => MatchSide::Error(e),
        },
    }
}

pub fn match_detail(a: &Descriptor, b: &Descriptor) -> MatchDetail {
    MatchDetail {
        forward: match_side(a, b),
        backward: match_side(b, a),
    }
}

/// True iff each descriptor's Requirements evaluates to boolean true
/// against the other. A missing Requirements attribute counts as true;
/// undefined results and evaluation errors count as non-match.
pub fn symmetric_match(a: &Descriptor, b: &Descriptor) -> bool {
    match_detail(a, b).matched()
}

#[cfg(test)]
mod tests;
