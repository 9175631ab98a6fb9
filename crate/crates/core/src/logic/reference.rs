//! Brute-force reference semantics used to verify the DFA construction.
//!
//! Three-valued bounded evaluation on a finite word: `True` when every
//! infinite extension satisfies the formula with the witness inside the
//! word, `False` when no extension can satisfy it, `Unknown` otherwise. A
//! word is a good prefix exactly when the value is `True`. This is an
//! independent recursion straight off the satisfaction semantics; it never
//! touches the residual/automaton machinery. (For formulas containing a
//! valid or unsatisfiable subformula the three-valued verdict can stay
//! `Unknown` where a semantic analysis would decide; none of the supported
//! region-based specifications are of that degenerate shape.)

use super::ScltlFormula;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tri {
    True,
    False,
    Unknown,
}

fn tri_and(a: Tri, b: Tri) -> Tri {
    match (a, b) {
        (Tri::False, _) | (_, Tri::False) => Tri::False,
        (Tri::True, Tri::True) => Tri::True,
        _ => Tri::Unknown,
    }
}

fn tri_or(a: Tri, b: Tri) -> Tri {
    match (a, b) {
        (Tri::True, _) | (_, Tri::True) => Tri::True,
        (Tri::False, Tri::False) => Tri::False,
        _ => Tri::Unknown,
    }
}

fn eval(f: &ScltlFormula, props: &HashMap<&str, usize>, word: &[u32], j: usize) -> Tri {
    use ScltlFormula::*;
    match f {
        True => Tri::True,
        False => Tri::False,
        Atom(p) => {
            if j >= word.len() {
                Tri::Unknown
            } else if word[j] & (1 << props[p.as_str()]) != 0 {
                Tri::True
            } else {
                Tri::False
            }
        }
        NotAtom(p) => {
            if j >= word.len() {
                Tri::Unknown
            } else if word[j] & (1 << props[p.as_str()]) != 0 {
                Tri::False
            } else {
                Tri::True
            }
        }
        And(a, b) => tri_and(eval(a, props, word, j), eval(b, props, word, j)),
        Or(a, b) => tri_or(eval(a, props, word, j), eval(b, props, word, j)),
        Next(a) => {
            if j >= word.len() {
                Tri::Unknown
            } else {
                eval(a, props, word, j + 1)
            }
        }
        Until(a, b) => {
            if j >= word.len() {
                return Tri::Unknown;
            }
            tri_or(
                eval(b, props, word, j),
                tri_and(eval(a, props, word, j), eval(f, props, word, j + 1)),
            )
        }
        Eventually(a) => {
            if j >= word.len() {
                return Tri::Unknown;
            }
            tri_or(eval(a, props, word, j), eval(f, props, word, j + 1))
        }
    }
}

/// True iff `word` is a good prefix of the formula: every infinite
/// extension satisfies it.
pub fn is_good_prefix(f: &ScltlFormula, propositions: &[String], word: &[u32]) -> bool {
    let props: HashMap<&str, usize> = propositions
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();
    eval(f, &props, word, 0) == Tri::True
}
