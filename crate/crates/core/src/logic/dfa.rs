//! Good-prefix DFA construction.
//!
//! States are canonicalized formula residuals: reading a letter rewrites
//! the formula to what must still hold afterwards, constants fold, and
//! `true` / `false` become the absorbing accept / reject states. Moore
//! partition refinement minimizes the result.

use super::{LogicError, ScltlFormula};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const STATE_CAP: usize = 100_000;
const PROP_CAP: usize = 20;

/// Deterministic automaton over letters encoded as proposition bitmasks
/// (`bit i` = `propositions[i]` holds). Accepting states are absorbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dfa {
    pub propositions: Vec<String>,
    pub initial: usize,
    /// `transitions[state][letter]` with `letter < 2^propositions.len()`.
    pub transitions: Vec<Vec<usize>>,
    pub accepting: Vec<bool>,
}

impl Dfa {
    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_letters(&self) -> usize {
        1 << self.propositions.len()
    }

    pub fn step(&self, state: usize, letter: u32) -> usize {
        self.transitions[state][letter as usize]
    }

    pub fn is_accepting(&self, state: usize) -> bool {
        self.accepting[state]
    }

    /// Runs the word from the initial state; accepting is absorbing, so the
    /// final state decides whether some prefix was good.
    pub fn accepts(&self, word: &[u32]) -> bool {
        let mut q = self.initial;
        for l in word {
            q = self.step(q, *l);
        }
        self.accepting[q]
    }

    /// The all-rejecting absorbing state, when one exists.
    pub fn rejecting_sink(&self) -> Option<usize> {
        (0..self.n_states()).find(|&s| {
            !self.accepting[s] && self.transitions[s].iter().all(|t| *t == s)
        })
    }

    /// True when some accepting state is reachable from the initial one.
    pub fn accepting_reachable(&self) -> bool {
        let mut seen = vec![false; self.n_states()];
        let mut stack = vec![self.initial];
        seen[self.initial] = true;
        while let Some(s) = stack.pop() {
            if self.accepting[s] {
                return true;
            }
            for t in &self.transitions[s] {
                if !seen[*t] {
                    seen[*t] = true;
                    stack.push(*t);
                }
            }
        }
        false
    }
}

/// Canonical simplification. Conjunction/disjunction lists are flattened,
/// sorted, and deduped so equal residuals get equal keys; complementary
/// literals collapse to constants.
fn simplify(f: &ScltlFormula) -> ScltlFormula {
    use ScltlFormula::*;
    match f {
        True | False | Atom(_) | NotAtom(_) => f.clone(),
        Next(a) => match simplify(a) {
            True => True,
            False => False,
            s => Next(Box::new(s)),
        },
        Eventually(a) => match simplify(a) {
            True => True,
            False => False,
            Eventually(inner) => Eventually(inner),
            s => Eventually(Box::new(s)),
        },
        Until(a, b) => {
            let (sa, sb) = (simplify(a), simplify(b));
            match (&sa, &sb) {
                (_, True) => True,
                (_, False) => False,
                (False, _) => sb,
                (True, _) => Eventually(Box::new(sb)),
                _ => Until(Box::new(sa), Box::new(sb)),
            }
        }
        And(a, b) => {
            let mut terms = Vec::new();
            collect_and(&simplify(a), &mut terms);
            collect_and(&simplify(b), &mut terms);
            rebuild(terms, true)
        }
        Or(a, b) => {
            let mut terms = Vec::new();
            collect_or(&simplify(a), &mut terms);
            collect_or(&simplify(b), &mut terms);
            rebuild(terms, false)
        }
    }
}

fn collect_and(f: &ScltlFormula, out: &mut Vec<ScltlFormula>) {
    if let ScltlFormula::And(a, b) = f {
        collect_and(a, out);
        collect_and(b, out);
    } else {
        out.push(f.clone());
    }
}

fn collect_or(f: &ScltlFormula, out: &mut Vec<ScltlFormula>) {
    if let ScltlFormula::Or(a, b) = f {
        collect_or(a, out);
        collect_or(b, out);
    } else {
        out.push(f.clone());
    }
}

fn rebuild(mut terms: Vec<ScltlFormula>, conjunction: bool) -> ScltlFormula {
    use ScltlFormula::*;
    let (absorb, neutral) = if conjunction {
        (False, True)
    } else {
        (True, False)
    };
    terms.retain(|t| *t != neutral);
    if terms.iter().any(|t| *t == absorb) {
        return absorb;
    }
    terms.sort_by(|x, y| format!("{x}").cmp(&format!("{y}")));
    terms.dedup();
    // complementary literal pair collapses the whole list
    for t in &terms {
        if let Atom(p) = t {
            if terms.iter().any(|o| matches!(o, NotAtom(q) if q == p)) {
                return absorb;
            }
        }
    }
    match terms.len() {
        0 => neutral,
        1 => terms.pop().unwrap(),
        _ => {
            let mut it = terms.into_iter();
            let first = it.next().unwrap();
            it.fold(first, |acc, t| {
                if conjunction {
                    And(Box::new(acc), Box::new(t))
                } else {
                    Or(Box::new(acc), Box::new(t))
                }
            })
        }
    }
}

/// Residual after reading one letter: `letter . w` satisfies `f` iff `w`
/// satisfies the residual.
fn residual(f: &ScltlFormula, letter: u32, props: &HashMap<String, usize>) -> ScltlFormula {
    use ScltlFormula::*;
    match f {
        True => True,
        False => False,
        Atom(p) => {
            if letter & (1 << props[p]) != 0 {
                True
            } else {
                False
            }
        }
        NotAtom(p) => {
            if letter & (1 << props[p]) != 0 {
                False
            } else {
                True
            }
        }
        And(a, b) => And(
            Box::new(residual(a, letter, props)),
            Box::new(residual(b, letter, props)),
        ),
        Or(a, b) => Or(
            Box::new(residual(a, letter, props)),
            Box::new(residual(b, letter, props)),
        ),
        Next(a) => (**a).clone(),
        Until(a, b) => Or(
            Box::new(residual(b, letter, props)),
            Box::new(And(Box::new(residual(a, letter, props)), Box::new(f.clone()))),
        ),
        Eventually(a) => Or(Box::new(residual(a, letter, props)), Box::new(f.clone())),
    }
}

/// Builds the minimal good-prefix DFA of a co-safe formula over the given
/// proposition order. Propositions not referenced by the formula are
/// allowed (they widen the alphabet).
pub fn to_dfa(formula: &ScltlFormula, propositions: &[String]) -> Result<Dfa, LogicError> {
    if propositions.len() > PROP_CAP {
        return Err(LogicError::TooManyPropositions(propositions.len()));
    }
    for p in formula.propositions() {
        if !propositions.contains(&p) {
            return Err(LogicError::UnknownProposition(p));
        }
    }
    let prop_index: HashMap<String, usize> = propositions
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();
    let n_letters = 1usize << propositions.len();

    let init = simplify(formula);
    let mut key_to_state: HashMap<String, usize> = HashMap::new();
    let mut states: Vec<ScltlFormula> = Vec::new();
    let mut transitions: Vec<Vec<usize>> = Vec::new();
    let intern = |f: ScltlFormula,
                      states: &mut Vec<ScltlFormula>,
                      key_to_state: &mut HashMap<String, usize>|
     -> usize {
        let key = format!("{f}");
        if let Some(&id) = key_to_state.get(&key) {
            return id;
        }
        let id = states.len();
        key_to_state.insert(key, id);
        states.push(f);
        id
    };
    let initial = intern(init, &mut states, &mut key_to_state);
    let mut frontier = vec![initial];
    while let Some(s) = frontier.pop() {
        while transitions.len() <= s {
            transitions.push(Vec::new());
        }
        if !transitions[s].is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(n_letters);
        for letter in 0..n_letters {
            let next = simplify(&residual(&states[s], letter as u32, &prop_index));
            let known = states.len();
            let id = intern(next, &mut states, &mut key_to_state);
            if id >= known {
                frontier.push(id);
            }
            if states.len() > STATE_CAP {
                return Err(LogicError::TooManyStates(STATE_CAP));
            }
            row.push(id);
        }
        transitions[s] = row;
    }
    while transitions.len() < states.len() {
        transitions.push(Vec::new());
    }
    // any state discovered but not expanded (cannot happen with the BFS
    // above, but keep the invariant): make it explicit
    for (s, row) in transitions.iter_mut().enumerate() {
        if row.is_empty() {
            *row = vec![s; n_letters];
        }
    }
    let accepting: Vec<bool> = states.iter().map(|f| *f == ScltlFormula::True).collect();
    let dfa = Dfa {
        propositions: propositions.to_vec(),
        initial,
        transitions,
        accepting,
    };
    Ok(minimize(&dfa))
}

/// Moore partition refinement.
fn minimize(dfa: &Dfa) -> Dfa {
    let n = dfa.n_states();
    let letters = dfa.n_letters();
    let mut class: Vec<usize> = dfa.accepting.iter().map(|a| usize::from(*a)).collect();
    loop {
        let mut signature: Vec<(usize, Vec<usize>)> = Vec::with_capacity(n);
        for s in 0..n {
            let succ: Vec<usize> = (0..letters).map(|l| class[dfa.transitions[s][l]]).collect();
            signature.push((class[s], succ));
        }
        let mut map: HashMap<&(usize, Vec<usize>), usize> = HashMap::new();
        let mut next_class = vec![0usize; n];
        let mut count = 0;
        for s in 0..n {
            let id = *map.entry(&signature[s]).or_insert_with(|| {
                let id = count;
                count += 1;
                id
            });
            next_class[s] = id;
        }
        if next_class == class {
            break;
        }
        class = next_class;
    }
    let n_classes = class.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut reps = vec![usize::MAX; n_classes];
    for s in 0..n {
        if reps[class[s]] == usize::MAX {
            reps[class[s]] = s;
        }
    }
    let transitions: Vec<Vec<usize>> = (0..n_classes)
        .map(|c| {
            (0..letters)
                .map(|l| class[dfa.transitions[reps[c]][l]])
                .collect()
        })
        .collect();
    let accepting: Vec<bool> = (0..n_classes).map(|c| dfa.accepting[reps[c]]).collect();
    Dfa {
        propositions: dfa.propositions.clone(),
        initial: class[dfa.initial],
        transitions,
        accepting,
    }
}
