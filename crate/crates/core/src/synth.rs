//! Robust dynamic programming on the automaton/abstraction product and
//! controller extraction.
//!
//! The backup treats the coupling deficit as a per-step loss:
//!
//! ```text
//! V_{n+1}(cell, q) = 1                                  if q accepting
//!   max_u min_v max{0, sum_{c'} P[cell,u,v][c'] *
//!                        V_n(c', step(q, letter(c'))) - delta(cell,u,v)}
//! ```
//!
//! The DFA consumes the robust letter of the successor cell; mass that
//! leaves the state box (the sink) contributes nothing; internal inputs are
//! adversarial. Accepting states stay pinned at one, so the iteration is
//! monotone and the deficit is never charged on accepting self-loops.

use crate::cert::{DeltaProfile, SsrCertificate, TableShape};
use crate::grid::{GridAbstraction, GridError, GridGeometry, TransitionTensor};
use crate::logic::{Dfa, LabeledRegions, LogicError};
use crate::par;
use crate::system::{OutputMap, Subsystem};
use crate::AxisBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("delta table shape {cert:?} does not match the abstraction shape {grid:?}")]
    CertShapeMismatch { cert: TableShape, grid: TableShape },
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("controller has no policy entry for cell {cell}, memory {q}")]
    MissingPolicy { cell: usize, q: usize },
}

/// Anything that can contract a transition row against a per-cell value
/// vector. Rows are indexed `(cell * ext + u) * int + v`.
pub trait TransitionModel: Sync {
    fn expected_value(&self, row: usize, values: &[f64]) -> f64;
}

impl TransitionModel for TransitionTensor {
    fn expected_value(&self, row: usize, values: &[f64]) -> f64 {
        TransitionTensor::expected_value(self, row, values)
    }
}

/// Dense row storage, used by oracles and hand-built product tests.
#[derive(Debug, Clone)]
pub struct DenseTransitions {
    pub rows: Vec<Vec<f64>>,
}

impl TransitionModel for DenseTransitions {
    fn expected_value(&self, row: usize, values: &[f64]) -> f64 {
        self.rows[row]
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum()
    }
}

/// Product of an abstraction with a DFA, ready for value iteration.
pub struct ProductModel<'a, T: TransitionModel> {
    pub transitions: &'a T,
    pub shape: TableShape,
    pub dfa: &'a Dfa,
    /// Robust letter of each cell's abstract output.
    pub cell_letters: &'a [u32],
    /// Cells allowed by the structural safety bound; a disabled cell acts
    /// as a rejecting sink.
    pub cell_enabled: &'a [bool],
    pub delta: &'a DeltaProfile,
}

/// Stopping rule for the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Exactly this many backups (finite-horizon value).
    Horizon(usize),
    /// Iterate until the sup-norm residual drops below `tol` (or
    /// `max_iters` as a guard).
    Tolerance { tol: f64, max_iters: usize },
}

/// Value table over (cell, memory state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub n_cells: usize,
    pub n_q: usize,
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ValueTable {
    pub fn value(&self, cell: usize, q: usize) -> f64 {
        self.values[cell * self.n_q + q]
    }
}

/// Runs the robust backup to the requested termination. Never errors on an
/// unreachable accepting state; the table is identically zero then (a
/// warning is logged).
pub fn robust_value_iteration<T: TransitionModel>(
    m: &ProductModel<'_, T>,
    termination: Termination,
) -> ValueTable {
    let n_cells = m.shape.states;
    let n_q = m.dfa.n_states();
    if !m.dfa.accepting_reachable() {
        log::warn!("no accepting automaton state is reachable; the value table will be zero");
    }
    let mut values = vec![0.0; n_cells * n_q];
    for c in 0..n_cells {
        for q in 0..n_q {
            if m.dfa.is_accepting(q) {
                values[c * n_q + q] = 1.0;
            }
        }
    }
    let (max_iters, tol) = match termination {
        Termination::Horizon(h) => (h, f64::NEG_INFINITY),
        Termination::Tolerance { tol, max_iters } => (max_iters, tol),
    };
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..max_iters {
        let next = sweep(m, &values);
        residual = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        values = next;
        iterations += 1;
        if residual < tol {
            break;
        }
    }
    ValueTable {
        n_cells,
        n_q,
        values,
        iterations,
        residual,
    }
}

/// One synchronous backup over every (cell, q).
fn sweep<T: TransitionModel>(m: &ProductModel<'_, T>, values: &[f64]) -> Vec<f64> {
    let n_cells = m.shape.states;
    let n_q = m.dfa.n_states();
    // W_q[c'] = V(c', step(q, letter(c'))), zero for disabled cells
    let w_tables: Vec<Vec<f64>> = (0..n_q)
        .map(|q| {
            (0..n_cells)
                .map(|c| {
                    if !m.cell_enabled[c] {
                        0.0
                    } else {
                        let q2 = m.dfa.step(q, m.cell_letters[c]);
                        values[c * n_q + q2]
                    }
                })
                .collect()
        })
        .collect();
    par::map_indexed(n_cells * n_q, |idx| {
        let (cell, q) = (idx / n_q, idx % n_q);
        if m.dfa.is_accepting(q) {
            return 1.0;
        }
        if !m.cell_enabled[cell] {
            return 0.0;
        }
        backup(m, &w_tables[q], cell)
    })
}

/// `max_u min_v max{0, E[W] - delta}` for one cell against a prepared
/// successor-value vector.
fn backup<T: TransitionModel>(m: &ProductModel<'_, T>, w: &[f64], cell: usize) -> f64 {
    let mut best = 0.0f64;
    for e in 0..m.shape.ext_inputs {
        let mut worst = f64::INFINITY;
        for i in 0..m.shape.int_inputs {
            let row = m.shape.index(cell, e, i);
            let v = (m.transitions.expected_value(row, w) - m.delta.value_at(cell, e, i)).max(0.0);
            if v < worst {
                worst = v;
            }
        }
        if worst > best {
            best = worst;
        }
    }
    best.clamp(0.0, 1.0)
}

/// Argmax policy at the converged table; ties break to the smallest input
/// index, accepting memory states get index 0.
pub fn extract_policy<T: TransitionModel>(
    m: &ProductModel<'_, T>,
    table: &ValueTable,
) -> Vec<usize> {
    let n_cells = m.shape.states;
    let n_q = m.dfa.n_states();
    let w_tables: Vec<Vec<f64>> = (0..n_q)
        .map(|q| {
            (0..n_cells)
                .map(|c| {
                    if !m.cell_enabled[c] {
                        0.0
                    } else {
                        table.value(c, m.dfa.step(q, m.cell_letters[c]))
                    }
                })
                .collect()
        })
        .collect();
    par::map_indexed(n_cells * n_q, |idx| {
        let (cell, q) = (idx / n_q, idx % n_q);
        if m.dfa.is_accepting(q) || !m.cell_enabled[cell] {
            return 0;
        }
        let mut best_e = 0;
        let mut best = f64::NEG_INFINITY;
        for e in 0..m.shape.ext_inputs {
            let mut worst = f64::INFINITY;
            for i in 0..m.shape.int_inputs {
                let row = m.shape.index(cell, e, i);
                let v = (m.transitions.expected_value(row, &w_tables[q])
                    - m.delta.value_at(cell, e, i))
                .max(0.0);
                if v < worst {
                    worst = v;
                }
            }
            if worst > best {
                best = worst;
                best_e = e;
            }
        }
        best_e
    })
}

/// Finite-memory controller: DFA memory plus a policy table over
/// (cell, memory), refined onto the concrete system by the identity
/// interface (the abstract external input is applied as-is).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Controller {
    pub subsystem_id: String,
    pub geometry: GridGeometry,
    pub ext_inputs: Vec<Vec<f64>>,
    pub dfa: Dfa,
    pub regions: LabeledRegions,
    /// Robust labeling radius used for memory updates.
    pub epsilon: f64,
    pub output_map: OutputMap,
    /// `(cell, q) -> external input index`.
    pub policy: Vec<usize>,
}

impl Controller {
    pub fn n_q(&self) -> usize {
        self.dfa.n_states()
    }

    /// External input for a concrete state, or `None` when the state left
    /// the box (the caller holds the last input and flags failure).
    pub fn input_for(&self, x: &[f64], q: usize) -> Option<Vec<f64>> {
        let cell = self.geometry.locate(x)?;
        let e = self.policy[cell * self.n_q() + q];
        Some(self.ext_inputs[e].clone())
    }

    /// Robust letter of the abstract output of the cell containing `x`.
    pub fn abstract_letter(&self, x: &[f64]) -> Result<Option<u32>, LogicError> {
        match self.geometry.locate(x) {
            None => Ok(None),
            Some(cell) => {
                let y = self.output_map.apply(&self.geometry.representative(cell));
                self.regions.robust_letter(self.epsilon, &y).map(Some)
            }
        }
    }

    /// Memory state after observing the initial state: the automaton
    /// consumes the initial output before the first transition.
    pub fn initial_memory(&self, x0: &[f64]) -> Result<usize, LogicError> {
        match self.abstract_letter(x0)? {
            Some(letter) => Ok(self.dfa.step(self.dfa.initial, letter)),
            None => Ok(self.dfa.initial),
        }
    }

    /// Memory update on the next observed state; outside the box the memory
    /// holds (the episode is already failed by the caller's accounting).
    pub fn advance_memory(&self, q: usize, x_next: &[f64]) -> Result<usize, LogicError> {
        match self.abstract_letter(x_next)? {
            Some(letter) => Ok(self.dfa.step(q, letter)),
            None => Ok(q),
        }
    }
}

/// Everything synthesis produces for one subsystem.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub table: ValueTable,
    pub controller: Controller,
    pub cell_letters: Vec<u32>,
    pub cell_enabled: Vec<bool>,
}

impl SynthesisResult {
    /// Satisfaction lower bound at a concrete initial state: the automaton
    /// first consumes the initial output's robust letter.
    pub fn bound_at(&self, x0: &[f64]) -> Option<f64> {
        let cell = self.controller.geometry.locate(x0)?;
        if !self.cell_enabled[cell] {
            return Some(0.0);
        }
        let q1 = self
            .controller
            .dfa
            .step(self.controller.dfa.initial, self.cell_letters[cell]);
        Some(self.table.value(cell, q1))
    }

    /// Bound per cell (the data behind the bound surface).
    pub fn bound_per_cell(&self) -> Vec<f64> {
        (0..self.controller.geometry.n_cells())
            .map(|c| {
                if !self.cell_enabled[c] {
                    return 0.0;
                }
                let q1 = self
                    .controller
                    .dfa
                    .step(self.controller.dfa.initial, self.cell_letters[c]);
                self.table.value(c, q1)
            })
            .collect()
    }
}

/// Full synthesis for one subsystem: robust letters per cell, optional
/// structural safety restriction, value iteration, controller extraction.
pub fn synthesize(
    grid: &GridAbstraction,
    s: &Subsystem,
    dfa: &Dfa,
    regions: &LabeledRegions,
    cert: &SsrCertificate,
    safe_box: Option<&AxisBox>,
    termination: Termination,
) -> Result<SynthesisResult, SynthError> {
    let shape = grid.table_shape();
    if let DeltaProfile::Table { shape: ts, .. } = &cert.delta {
        if *ts != shape {
            return Err(SynthError::CertShapeMismatch {
                cert: *ts,
                grid: shape,
            });
        }
    }
    let geometry = &grid.geometry;
    let n_cells = geometry.n_cells();
    let mut cell_letters = Vec::with_capacity(n_cells);
    let mut cell_enabled = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let y = s.output_map.apply(&geometry.representative(c));
        cell_letters.push(regions.robust_letter(cert.epsilon, &y)?);
        let enabled = match safe_box {
            None => true,
            Some(cb) => s
                .output_map
                .image_box(&geometry.cell_bounds(c))
                .subset_of(cb),
        };
        cell_enabled.push(enabled);
    }
    let transitions = grid.transitions()?;
    let model = ProductModel {
        transitions,
        shape,
        dfa,
        cell_letters: &cell_letters,
        cell_enabled: &cell_enabled,
        delta: &cert.delta,
    };
    let table = robust_value_iteration(&model, termination);
    let policy = extract_policy(&model, &table);
    let controller = Controller {
        subsystem_id: s.id.clone(),
        geometry: geometry.clone(),
        ext_inputs: grid.ext_inputs.clone(),
        dfa: dfa.clone(),
        regions: regions.clone(),
        epsilon: cert.epsilon,
        output_map: s.output_map.clone(),
        policy,
    };
    Ok(SynthesisResult {
        table,
        controller,
        cell_letters,
        cell_enabled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{to_dfa, ScltlFormula};

    fn props(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Exhaustive path-walk oracle: plain recursion over successors with
    /// per-step deficit subtraction and flooring, no memoization, dense
    /// rows. Independent route for the same recursion.
    fn oracle_value(
        t: &DenseTransitions,
        shape: TableShape,
        dfa: &Dfa,
        letters: &[u32],
        delta: &DeltaProfile,
        cell: usize,
        q: usize,
        steps: usize,
    ) -> f64 {
        if dfa.is_accepting(q) {
            return 1.0;
        }
        if steps == 0 {
            return 0.0;
        }
        let mut best = 0.0f64;
        for e in 0..shape.ext_inputs {
            let mut worst = f64::INFINITY;
            for i in 0..shape.int_inputs {
                let row = shape.index(cell, e, i);
                let mut sum = 0.0;
                for (c2, p) in t.rows[row].iter().enumerate() {
                    if *p > 0.0 {
                        let q2 = dfa.step(q, letters[c2]);
                        sum += p * oracle_value(t, shape, dfa, letters, delta, c2, q2, steps - 1);
                    }
                }
                let v = (sum - delta.value_at(cell, e, i)).max(0.0);
                worst = worst.min(v);
            }
            best = best.max(worst);
        }
        best
    }

    fn reach_dfa() -> Dfa {
        to_dfa(&ScltlFormula::parse("F goal").unwrap(), &props(&["goal"])).unwrap()
    }

    #[test]
    fn pre_goal_state_pays_one_deficit() {
        // two cells: cell 1 is the goal; cell 0 reaches it surely in one step
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 2,
            ext_inputs: 1,
            int_inputs: 1,
        };
        let t = DenseTransitions {
            rows: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        };
        let letters = vec![0u32, 1u32];
        let enabled = vec![true, true];
        let delta = DeltaProfile::Constant(0.1);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(1));
        // non-goal memory state at the pre-goal cell: 1 - 0.1
        let q0 = dfa.initial;
        assert!(!dfa.is_accepting(q0));
        assert!((v.value(0, q0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn accepting_memory_is_pinned_at_one() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 1,
            ext_inputs: 1,
            int_inputs: 1,
        };
        let t = DenseTransitions {
            rows: vec![vec![1.0]],
        };
        let letters = vec![1u32]; // the only cell is labeled goal
        let enabled = vec![true];
        let delta = DeltaProfile::Constant(0.0);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(1));
        let q_acc = (0..dfa.n_states()).find(|q| dfa.is_accepting(*q)).unwrap();
        assert_eq!(v.value(0, q_acc), 1.0);
        // consuming the initial label lands in the accepting state directly
        assert!(dfa.is_accepting(dfa.step(dfa.initial, letters[0])));
    }

    /// Five-cell random walk, horizon 3, no deficit: table equals the
    /// exhaustive path enumeration.
    #[test]
    fn random_walk_matches_path_enumeration() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 5,
            ext_inputs: 2,
            int_inputs: 1,
        };
        // action 0 drifts left, action 1 drifts right; cell 4 is the goal
        let mut rows = Vec::new();
        for c in 0..5usize {
            for a in 0..2usize {
                let mut row = vec![0.0; 5];
                let (lo, hi) = if a == 0 {
                    (c.saturating_sub(1), c)
                } else {
                    (c, (c + 1).min(4))
                };
                row[lo] += 0.45;
                row[hi] += 0.45;
                row[c.min(4)] += 0.1;
                // normalize exactly
                let s: f64 = row.iter().sum();
                for v in &mut row {
                    *v /= s;
                }
                rows.push(row);
            }
        }
        let t = DenseTransitions { rows };
        let letters = vec![0, 0, 0, 0, 1u32];
        let enabled = vec![true; 5];
        let delta = DeltaProfile::Constant(0.0);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(3));
        for cell in 0..5 {
            for q in 0..dfa.n_states() {
                let expect = oracle_value(&t, shape, &dfa, &letters, &delta, cell, q, 3);
                assert!(
                    (v.value(cell, q) - expect).abs() < 1e-12,
                    "cell {cell} q {q}: {} vs {expect}",
                    v.value(cell, q)
                );
            }
        }
    }

    /// Two internal-input points, one of which zeroes the goal probability:
    /// the backup must take the min.
    #[test]
    fn adversarial_internal_input_takes_the_min() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 2,
            ext_inputs: 1,
            int_inputs: 2,
        };
        let t = DenseTransitions {
            rows: vec![
                vec![0.0, 1.0], // cell 0, v=0: reach goal
                vec![1.0, 0.0], // cell 0, v=1: stay
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ],
        };
        let letters = vec![0u32, 1u32];
        let enabled = vec![true, true];
        let delta = DeltaProfile::Constant(0.0);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(4));
        assert_eq!(v.value(0, dfa.initial), 0.0, "adversary blocks the goal");
        let oracle = oracle_value(&t, shape, &dfa, &letters, &delta, 0, dfa.initial, 4);
        assert_eq!(oracle, 0.0);
    }

    #[test]
    fn iteration_is_monotone_and_bounded() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 3,
            ext_inputs: 2,
            int_inputs: 1,
        };
        let t = DenseTransitions {
            rows: vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.5, 0.3],
                vec![0.1, 0.6, 0.3],
                vec![0.3, 0.3, 0.4],
                vec![0.0, 0.2, 0.8],
                vec![0.5, 0.25, 0.25],
            ],
        };
        let letters = vec![0, 0, 1u32];
        let enabled = vec![true; 3];
        let delta = DeltaProfile::Constant(0.05);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let mut prev = robust_value_iteration(&m, Termination::Horizon(1));
        for h in 2..12 {
            let cur = robust_value_iteration(&m, Termination::Horizon(h));
            for (a, b) in prev.values.iter().zip(&cur.values) {
                assert!(b >= a, "monotone convergence violated: {b} < {a}");
                assert!((0.0..=1.0).contains(b));
            }
            prev = cur;
        }
        // residual-based stopping also terminates
        let v = robust_value_iteration(
            &m,
            Termination::Tolerance {
                tol: 1e-10,
                max_iters: 1000,
            },
        );
        assert!(v.residual < 1e-10);
        assert!(v.iterations < 1000);
    }

    #[test]
    fn larger_deficit_never_raises_the_value() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 3,
            ext_inputs: 2,
            int_inputs: 1,
        };
        let t = DenseTransitions {
            rows: vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.5, 0.3],
                vec![0.1, 0.6, 0.3],
                vec![0.3, 0.3, 0.4],
                vec![0.0, 0.2, 0.8],
                vec![0.5, 0.25, 0.25],
            ],
        };
        let letters = vec![0, 0, 1u32];
        let enabled = vec![true; 3];
        let lo = DeltaProfile::Constant(0.02);
        let hi = DeltaProfile::Constant(0.08);
        let run = |delta: &DeltaProfile| {
            let m = ProductModel {
                transitions: &t,
                shape,
                dfa: &dfa,
                cell_letters: &letters,
                cell_enabled: &enabled,
                delta,
            };
            robust_value_iteration(&m, Termination::Horizon(6))
        };
        let vl = run(&lo);
        let vh = run(&hi);
        for (a, b) in vl.values.iter().zip(&vh.values) {
            assert!(*b <= a + 1e-15, "delta-monotonicity violated");
        }
    }

    #[test]
    fn tie_break_prefers_smaller_input_index() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 2,
            ext_inputs: 2,
            int_inputs: 1,
        };
        // both actions identical: tie must resolve to index 0
        let t = DenseTransitions {
            rows: vec![
                vec![0.5, 0.5],
                vec![0.5, 0.5],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ],
        };
        let letters = vec![0u32, 1u32];
        let enabled = vec![true, true];
        let delta = DeltaProfile::Constant(0.0);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(5));
        let policy = extract_policy(&m, &v);
        assert_eq!(policy[0 * dfa.n_states() + dfa.initial], 0);
        // accepting memory uses the don't-care convention (index 0)
        let q_acc = (0..dfa.n_states()).find(|q| dfa.is_accepting(*q)).unwrap();
        assert_eq!(policy[q_acc], 0);
    }

    #[test]
    fn disabled_cells_act_as_rejecting_sink() {
        let dfa = reach_dfa();
        let shape = TableShape {
            states: 2,
            ext_inputs: 1,
            int_inputs: 1,
        };
        let t = DenseTransitions {
            rows: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        };
        let letters = vec![0u32, 1u32];
        let enabled = vec![true, false]; // the goal cell is outside the safety box
        let delta = DeltaProfile::Constant(0.0);
        let m = ProductModel {
            transitions: &t,
            shape,
            dfa: &dfa,
            cell_letters: &letters,
            cell_enabled: &enabled,
            delta: &delta,
        };
        let v = robust_value_iteration(&m, Termination::Horizon(10));
        assert_eq!(v.value(0, dfa.initial), 0.0);
    }
}
