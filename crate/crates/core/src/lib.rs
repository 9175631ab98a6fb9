//! Controller synthesis with formal satisfaction lower bounds for networks of
//! uncertain discrete-time nonlinear stochastic systems.
//!
//! The toolkit couples each uncertain subsystem (Gaussian-mixture noise,
//! parameters confined to a box) with a nominal finite abstraction through
//! sub-probability coupling certificates, runs robust dynamic programming on
//! the automaton/abstraction product, and composes the per-subsystem
//! guarantees into a network-wide satisfaction lower bound. A Monte Carlo
//! harness replays the true coupled dynamics to validate every bound.
//!
//! Pipeline stages (see [`pipeline`]):
//!
//! 1. `certify`    - model-uncertainty coupling deficit tables (delta_1)
//! 2. `abstract`   - grid abstraction, transition tensor, (eps_2, delta_2)
//! 3. `synthesize` - transitive certificate composition + robust value
//!                   iteration + controller extraction
//! 4. `compose`    - interconnection checks and global network bounds
//! 5. `validate`   - seeded Monte Carlo of the true uncertain network
//!
//! With the `parallel` feature (default) the data-parallel inner loops run on
//! rayon; without it every code path falls back to the identical sequential
//! sweep, producing bit-for-bit the same artifacts.

pub mod cert;
pub mod expr;
pub mod gmm;
pub mod grid;
pub mod linalg;
pub mod logic;
pub mod network;
pub mod par;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod synth;
pub mod system;

pub use cert::{CertError, DeltaProfile, RelationKind, SsrCertificate};
pub use expr::{DynamicsExpr, ExprError};
pub use gmm::{CouplingPair, GaussianMixture, GmmError};
pub use grid::{GridAbstraction, GridError};
pub use logic::{Dfa, LabeledRegions, LogicError, PropRole, ScltlFormula};
pub use network::{GlobalBound, Network, NetworkError, Topology};
pub use scenario::{Scenario, ScenarioError};
pub use sim::{SimulationRun, Verdict};
pub use synth::{Controller, SynthError, ValueTable};
pub use system::{Subsystem, SystemError};

/// Axis-aligned box, the basic set primitive for state, input, output,
/// and parameter domains.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AxisBox {
    /// Per-dimension `[low, high]` bounds, `low <= high`.
    pub bounds: Vec<[f64; 2]>,
}

impl AxisBox {
    pub fn new(bounds: Vec<[f64; 2]>) -> Self {
        Self { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(v, b)| *v >= b[0] && *v <= b[1])
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| b[1] - b[0]).collect()
    }

    pub fn is_degenerate(&self) -> bool {
        self.bounds.iter().any(|b| b[1] <= b[0])
    }

    /// True when every point of `self` lies in `other`.
    pub fn subset_of(&self, other: &AxisBox) -> bool {
        self.dim() == other.dim()
            && self
                .bounds
                .iter()
                .zip(&other.bounds)
                .all(|(a, b)| a[0] >= b[0] && a[1] <= b[1])
    }

    /// All 2^d corner points. Degenerate axes (`low == high`) contribute a
    /// single coordinate.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        let mut corner = vec![0.0; d];
        fn rec(bounds: &[[f64; 2]], i: usize, corner: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
            if i == bounds.len() {
                out.push(corner.clone());
                return;
            }
            corner[i] = bounds[i][0];
            rec(bounds, i + 1, corner, out);
            if bounds[i][1] > bounds[i][0] {
                corner[i] = bounds[i][1];
                rec(bounds, i + 1, corner, out);
            }
        }
        rec(&self.bounds, 0, &mut corner, &mut out);
        out
    }

    /// Evenly spaced lattice with `points` values per axis, endpoints
    /// included (`points == 1` yields the center).
    pub fn lattice(&self, points: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|b| lattice_axis(b[0], b[1], points))
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(out.len() * axis.len());
            for partial in &out {
                for v in axis {
                    let mut p = partial.clone();
                    p.push(*v);
                    next.push(p);
                }
            }
            out = next;
        }
        out
    }
}

/// Evenly spaced points on `[lo, hi]` including both endpoints; a single
/// point sits at the midpoint.
pub fn lattice_axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 1, "lattice needs at least one point");
    if points == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_lattice_includes_endpoints() {
        assert_eq!(lattice_axis(0.95, 1.05, 3), vec![0.95, 1.0, 1.05]);
        assert_eq!(lattice_axis(-1.0, 1.0, 5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(lattice_axis(2.0, 4.0, 1), vec![3.0]);
    }

    #[test]
    fn box_corners_handle_degenerate_axes() {
        let b = AxisBox::new(vec![[0.0, 1.0], [2.0, 2.0]]);
        assert_eq!(b.corners(), vec![vec![0.0, 2.0], vec![1.0, 2.0]]);
        let full = AxisBox::new(vec![[0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(full.corners().len(), 4);
    }

    #[test]
    fn box_subset_and_contains() {
        let outer = AxisBox::new(vec![[0.0, 10.0]]);
        let inner = AxisBox::new(vec![[2.0, 3.0]]);
        assert!(inner.subset_of(&outer));
        assert!(!outer.subset_of(&inner));
        assert!(outer.contains(&[10.0]));
        assert!(!outer.contains(&[10.1]));
    }
}
