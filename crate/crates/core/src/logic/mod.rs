//! Co-safe temporal logic: formula parsing, translation to a deterministic
//! finite automaton over labeled regions, and epsilon-robust labeling of
//! abstract outputs.
//!
//! The fragment is negation-normal co-safe LTL: negation on atoms only,
//! conjunction, disjunction, next, until, and the derived eventually. A
//! formula's satisfaction is witnessed by a finite good prefix; the DFA
//! accepts exactly those prefixes, with an absorbing accept state.

mod dfa;
mod labels;
pub mod reference;

pub use dfa::{to_dfa, Dfa};
pub use labels::{LabeledRegions, PropRegion, PropRole};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("negation is restricted to atomic propositions in this fragment")]
    NegationOfCompound,
    #[error("the always operator is outside the co-safe fragment; declare safety bounds structurally instead")]
    AlwaysOutsideFragment,
    #[error("automaton construction exceeded {0} states")]
    TooManyStates(usize),
    #[error("at most 20 atomic propositions are supported, got {0}")]
    TooManyPropositions(usize),
    #[error("formula references proposition `{0}` which has no declared region")]
    UnknownProposition(String),
    #[error("region of proposition `{prop}` leaves the output box")]
    RegionOutsideOutputBox { prop: String },
    #[error(
        "proposition `{prop}` is boundary-ambiguous at the queried output and has no goal/obstacle role"
    )]
    AmbiguousBoundary { prop: String },
    #[error("{context}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
}

/// Co-safe formula AST. `True`/`False` arise from simplification; the
/// parser never produces them directly.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScltlFormula {
    True,
    False,
    Atom(String),
    NotAtom(String),
    And(Box<ScltlFormula>, Box<ScltlFormula>),
    Or(Box<ScltlFormula>, Box<ScltlFormula>),
    Next(Box<ScltlFormula>),
    Until(Box<ScltlFormula>, Box<ScltlFormula>),
    Eventually(Box<ScltlFormula>),
}

impl ScltlFormula {
    /// Parses the ASCII syntax: `!` (atoms only), `&`, `|`, `U`
    /// (right-associative, loosest), `X`, `F`; `G` is recognized and
    /// rejected as outside the fragment. Unary operators bind tightest,
    /// then `&`, then `|`, then `U`.
    pub fn parse(text: &str) -> Result<Self, LogicError> {
        let mut p = FormulaParser {
            bytes: text.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let f = p.until_expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(LogicError::Syntax {
                pos: p.pos,
                message: format!("unexpected trailing input `{}`", &text[p.pos..]),
            });
        }
        Ok(f)
    }

    /// Atomic propositions referenced by the formula, in first-appearance
    /// order.
    pub fn propositions(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk(f: &ScltlFormula, out: &mut Vec<String>) {
            match f {
                ScltlFormula::True | ScltlFormula::False => {}
                ScltlFormula::Atom(p) | ScltlFormula::NotAtom(p) => {
                    if !out.contains(p) {
                        out.push(p.clone());
                    }
                }
                ScltlFormula::And(a, b) | ScltlFormula::Or(a, b) | ScltlFormula::Until(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                ScltlFormula::Next(a) | ScltlFormula::Eventually(a) => walk(a, out),
            }
        }
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for ScltlFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScltlFormula::True => write!(f, "true"),
            ScltlFormula::False => write!(f, "false"),
            ScltlFormula::Atom(p) => write!(f, "{p}"),
            ScltlFormula::NotAtom(p) => write!(f, "!{p}"),
            ScltlFormula::And(a, b) => write!(f, "({a} & {b})"),
            ScltlFormula::Or(a, b) => write!(f, "({a} | {b})"),
            ScltlFormula::Next(a) => write!(f, "X {a}"),
            ScltlFormula::Until(a, b) => write!(f, "({a} U {b})"),
            ScltlFormula::Eventually(a) => write!(f, "F {a}"),
        }
    }
}

struct FormulaParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FormulaParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Lowest precedence: `a U b U c` parses as `a U (b U c)`.
    fn until_expr(&mut self) -> Result<ScltlFormula, LogicError> {
        let left = self.or_expr()?;
        self.skip_ws();
        if self.at_keyword("U") {
            self.pos += 1;
            let right = self.until_expr()?;
            return Ok(ScltlFormula::Until(Box::new(left), Box::new(right)));
        }
        Ok(left)
    }

    fn or_expr(&mut self) -> Result<ScltlFormula, LogicError> {
        let mut node = self.and_expr()?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'|') {
                self.pos += 1;
                node = ScltlFormula::Or(Box::new(node), Box::new(self.and_expr()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn and_expr(&mut self) -> Result<ScltlFormula, LogicError> {
        let mut node = self.unary()?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'&') {
                self.pos += 1;
                node = ScltlFormula::And(Box::new(node), Box::new(self.unary()?));
            } else {
                return Ok(node);
            }
        }
    }

    fn unary(&mut self) -> Result<ScltlFormula, LogicError> {
        self.skip_ws();
        match self.peek() {
            Some(b'!') => {
                self.pos += 1;
                let inner = self.unary()?;
                match inner {
                    ScltlFormula::Atom(p) => Ok(ScltlFormula::NotAtom(p)),
                    _ => Err(LogicError::NegationOfCompound),
                }
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.until_expr()?;
                self.skip_ws();
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(inner)
                } else {
                    Err(LogicError::Syntax {
                        pos: self.pos,
                        message: "expected `)`".into(),
                    })
                }
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                if self.at_keyword("F") {
                    self.pos += 1;
                    return Ok(ScltlFormula::Eventually(Box::new(self.unary()?)));
                }
                if self.at_keyword("X") {
                    self.pos += 1;
                    return Ok(ScltlFormula::Next(Box::new(self.unary()?)));
                }
                if self.at_keyword("G") {
                    return Err(LogicError::AlwaysOutsideFragment);
                }
                if self.at_keyword("U") {
                    return Err(LogicError::Syntax {
                        pos: self.pos,
                        message: "`U` is a binary operator".into(),
                    });
                }
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
                Ok(ScltlFormula::Atom(name.to_string()))
            }
            _ => Err(LogicError::Syntax {
                pos: self.pos,
                message: "expected `!`, `(`, operator, or proposition".into(),
            }),
        }
    }

    /// True when the next token is exactly the single-letter keyword (not a
    /// prefix of a longer identifier).
    fn at_keyword(&self, kw: &str) -> bool {
        let b = kw.as_bytes();
        if self.bytes.len() < self.pos + b.len() {
            return false;
        }
        if &self.bytes[self.pos..self.pos + b.len()] != b {
            return false;
        }
        match self.bytes.get(self.pos + b.len()) {
            Some(c) if c.is_ascii_alphanumeric() || *c == b'_' => false,
            _ => true,
        }
    }
}
