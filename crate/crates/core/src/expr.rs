//! Parsed dynamics expressions.
//!
//! Scenario files carry the per-coordinate state update as plain text so a
//! scenario is self-contained; this module freezes the grammar:
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := number | var | func '(' expr ')' | '(' expr ')' | '-' factor
//! var    := 'x[' int ']' | 'u[' int ']' | 'theta[' int ']'
//! func   := 'sin' | 'cos' | 'exp' | 'abs'
//! ```
//!
//! Numbers are ordinary floating literals (digits, optional fraction,
//! optional exponent). `u` indexes the concatenated input vector, external
//! coordinates first, then internal ones.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("{var}[{index}] out of range: declared dimension is {dim}")]
    IndexOutOfRange {
        var: &'static str,
        index: usize,
        dim: usize,
    },
    #[error("division by zero while evaluating `{0}`")]
    DivisionByZero(String),
    #[error("non-finite value while evaluating `{0}`")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    State,
    Input,
    Theta,
}

impl VarKind {
    fn name(self) -> &'static str {
        match self {
            VarKind::State => "x",
            VarKind::Input => "u",
            VarKind::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuncKind {
    Sin,
    Cos,
    Exp,
    Abs,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(VarKind, usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Func(FuncKind, Box<Node>),
}

/// One scalar expression over `x[i]`, `u[i]`, `theta[i]`. Keeps the source
/// text for serialization and error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsExpr {
    text: String,
    root: Node,
}

impl DynamicsExpr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let mut p = Parser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(ExprError::Syntax {
                pos: p.pos,
                message: format!("unexpected trailing input `{}`", &text[p.pos..]),
            });
        }
        Ok(Self {
            text: text.to_string(),
            root,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Checks every variable reference against the declared dimensions.
    pub fn validate_indices(
        &self,
        state_dim: usize,
        input_dim: usize,
        theta_dim: usize,
    ) -> Result<(), ExprError> {
        fn walk(n: &Node, dims: (usize, usize, usize)) -> Result<(), ExprError> {
            match n {
                Node::Num(_) => Ok(()),
                Node::Var(kind, index) => {
                    let dim = match kind {
                        VarKind::State => dims.0,
                        VarKind::Input => dims.1,
                        VarKind::Theta => dims.2,
                    };
                    if *index >= dim {
                        Err(ExprError::IndexOutOfRange {
                            var: kind.name(),
                            index: *index,
                            dim,
                        })
                    } else {
                        Ok(())
                    }
                }
                Node::Neg(a) | Node::Func(_, a) => walk(a, dims),
                Node::Bin(_, a, b) => {
                    walk(a, dims)?;
                    walk(b, dims)
                }
            }
        }
        walk(&self.root, (state_dim, input_dim, theta_dim))
    }

    /// True when no `theta[i]` occurs (the expression is parameter-free).
    pub fn is_theta_free(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(kind, _) => *kind != VarKind::Theta,
                Node::Neg(a) | Node::Func(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    pub fn eval(&self, x: &[f64], u: &[f64], theta: &[f64]) -> Result<f64, ExprError> {
        fn ev(n: &Node, x: &[f64], u: &[f64], theta: &[f64], text: &str) -> Result<f64, ExprError> {
            Ok(match n {
                Node::Num(v) => *v,
                Node::Var(kind, i) => {
                    let slice = match kind {
                        VarKind::State => x,
                        VarKind::Input => u,
                        VarKind::Theta => theta,
                    };
                    *slice.get(*i).ok_or(ExprError::IndexOutOfRange {
                        var: kind.name(),
                        index: *i,
                        dim: slice.len(),
                    })?
                }
                Node::Neg(a) => -ev(a, x, u, theta, text)?,
                Node::Func(f, a) => {
                    let v = ev(a, x, u, theta, text)?;
                    match f {
                        FuncKind::Sin => v.sin(),
                        FuncKind::Cos => v.cos(),
                        FuncKind::Exp => v.exp(),
                        FuncKind::Abs => v.abs(),
                    }
                }
                Node::Bin(op, a, b) => {
                    let va = ev(a, x, u, theta, text)?;
                    let vb = ev(b, x, u, theta, text)?;
                    match op {
                        BinOp::Add => va + vb,
                        BinOp::Sub => va - vb,
                        BinOp::Mul => va * vb,
                        BinOp::Div => {
                            if vb == 0.0 {
                                return Err(ExprError::DivisionByZero(text.to_string()));
                            }
                            va / vb
                        }
                    }
                }
            })
        }
        let v = ev(&self.root, x, u, theta, &self.text)?;
        if !v.is_finite() {
            return Err(ExprError::NonFinite(self.text.clone()));
        }
        Ok(v)
    }
}

impl fmt::Display for DynamicsExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for DynamicsExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for DynamicsExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        DynamicsExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ExprError> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(ExprError::Syntax {
                pos: self.pos,
                message: format!("expected `{}`", b as char),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut node = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Add, Box::new(node), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Sub, Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut node = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Mul, Box::new(node), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    node = Node::Bin(BinOp::Div, Box::new(node), Box::new(self.factor()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.factor()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(ExprError::Syntax {
                pos: self.pos,
                message: "expected number, variable, function, `(` or `-`".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ExprError::Syntax {
                pos: start,
                message: format!("invalid number `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        match name {
            "x" | "u" | "theta" => {
                let kind = match name {
                    "x" => VarKind::State,
                    "u" => VarKind::Input,
                    _ => VarKind::Theta,
                };
                self.skip_ws();
                self.expect(b'[')?;
                self.skip_ws();
                let idx = self.index()?;
                self.skip_ws();
                self.expect(b']')?;
                Ok(Node::Var(kind, idx))
            }
            "sin" | "cos" | "exp" | "abs" => {
                let f = match name {
                    "sin" => FuncKind::Sin,
                    "cos" => FuncKind::Cos,
                    "exp" => FuncKind::Exp,
                    _ => FuncKind::Abs,
                };
                self.skip_ws();
                self.expect(b'(')?;
                let inner = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(Node::Func(f, Box::new(inner)))
            }
            _ => Err(ExprError::Syntax {
                pos: start,
                message: format!(
                    "unknown identifier `{name}` (variables: x[i], u[i], theta[i]; functions: sin, cos, exp, abs)"
                ),
            }),
        }
    }

    fn index(&mut self) -> Result<usize, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<usize>().map_err(|_| ExprError::Syntax {
            pos: start,
            message: "expected integer index".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(text: &str, x: &[f64], u: &[f64], th: &[f64]) -> f64 {
        DynamicsExpr::parse(text).unwrap().eval(x, u, th).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], &[], &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[], &[], &[]), 9.0);
        assert_eq!(ev("8 / 4 / 2", &[], &[], &[]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[], &[], &[]), -4.0);
        assert_eq!(ev("-2 * 3", &[], &[], &[]), -6.0);
        assert_eq!(ev("--2", &[], &[], &[]), 2.0);
    }

    #[test]
    fn variables_and_functions() {
        let x = [2.0, -1.0];
        let u = [0.5];
        let th = [4.0];
        assert_eq!(ev("x[0] + u[0] / theta[0]", &x, &u, &th), 2.125);
        assert!((ev("sin(x[1]) + cos(0)", &x, &u, &th) - ((-1.0f64).sin() + 1.0)).abs() < 1e-15);
        assert_eq!(ev("abs(x[1])", &x, &u, &th), 1.0);
        assert!((ev("exp(1)", &[], &[], &[]) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("1.5e2", &[], &[], &[]), 150.0);
    }

    #[test]
    fn delivery_style_expression_round_trips() {
        let text = "0.9*x[0] + 0.6*sin(0.1*x[1]) + 1.7*theta[0]*u[0]";
        let e = DynamicsExpr::parse(text).unwrap();
        let v = e.eval(&[1.0, 0.0], &[0.0, 0.0], &[1.0]).unwrap();
        assert!((v - 0.9).abs() < 1e-15);
        let json = serde_json::to_string(&e).unwrap();
        let back: DynamicsExpr = serde_json::from_str(&json).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = DynamicsExpr::parse("1 + * 2").unwrap_err();
        assert!(matches!(err, ExprError::Syntax { pos: 4, .. }), "{err}");
        let err = DynamicsExpr::parse("y[0]").unwrap_err();
        assert!(err.to_string().contains("unknown identifier `y`"));
        assert!(DynamicsExpr::parse("sin 3").is_err());
        assert!(DynamicsExpr::parse("x[0] x[1]").is_err());
    }

    #[test]
    fn division_by_zero_is_reported() {
        let e = DynamicsExpr::parse("u[0] / theta[0]").unwrap();
        assert!(matches!(
            e.eval(&[], &[1.0], &[0.0]),
            Err(ExprError::DivisionByZero(_))
        ));
    }

    #[test]
    fn non_finite_results_are_reported() {
        let e = DynamicsExpr::parse("exp(x[0])").unwrap();
        assert!(matches!(
            e.eval(&[1e9], &[], &[]),
            Err(ExprError::NonFinite(_))
        ));
    }

    #[test]
    fn index_validation_names_the_variable() {
        let e = DynamicsExpr::parse("x[2] + theta[0]").unwrap();
        let err = e.validate_indices(2, 0, 1).unwrap_err();
        assert!(matches!(
            err,
            ExprError::IndexOutOfRange {
                var: "x",
                index: 2,
                dim: 2
            }
        ));
        assert!(e.validate_indices(3, 0, 1).is_ok());
    }

    #[test]
    fn theta_freeness_detection() {
        assert!(DynamicsExpr::parse("x[0] + u[0]").unwrap().is_theta_free());
        assert!(!DynamicsExpr::parse("theta[1]").unwrap().is_theta_free());
    }
}
