//! Finite-state abstraction of the nominal subsystem: uniform rectangular
//! partition of the state box with an absorbing sink for escaping mass,
//! evenly spaced input lattices, the transition tensor, and the
//! discretization certificate (eps_2, delta_2).
//!
//! Transition rows factorize per mixture component into per-axis interval
//! masses (diagonal covariances are required), so the tensor is stored as
//! those 1D factors. `prob` materializes single entries and
//! `expected_value` contracts a whole row against a value vector without
//! ever building the dense row.

use crate::cert::{CertError, DeltaProfile, RelationKind, SsrCertificate, TableShape};
use crate::gmm::coupling::k1_deficit;
use crate::gmm::{normal_interval_mass, Covariance};
use crate::par;
use crate::system::{Subsystem, SystemError};
use crate::{lattice_axis, AxisBox};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("state box axis {0} is degenerate (zero width)")]
    DegenerateBox(usize),
    #[error("{context}: expected {expected} entries, got {actual}")]
    CountMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("cell/input counts must be at least 1")]
    ZeroCount,
    #[error(
        "component {0} has a non-diagonal covariance; the tensor fast path needs a diagonal \
         covariance or an axis-aligned grid in whitened coordinates"
    )]
    NonDiagonalCovariance(usize),
    #[error("transitions have not been built yet")]
    TransitionsMissing,
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Cert(#[from] CertError),
}

/// Uniform rectangular partition of the state box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub state_box: AxisBox,
    pub cells_per_dim: Vec<usize>,
}

impl GridGeometry {
    pub fn dim(&self) -> usize {
        self.cells_per_dim.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_dim.iter().product()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.state_box
            .widths()
            .iter()
            .zip(&self.cells_per_dim)
            .map(|(w, c)| w / *c as f64)
            .collect()
    }

    /// Row-major cell index (first axis major, last axis contiguous).
    pub fn cell_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for (c, n) in coords.iter().zip(&self.cells_per_dim) {
            idx = idx * n + c;
        }
        idx
    }

    pub fn cell_coords(&self, mut index: usize) -> Vec<usize> {
        let mut coords = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            coords[d] = index % self.cells_per_dim[d];
            index /= self.cells_per_dim[d];
        }
        coords
    }

    pub fn cell_bounds(&self, index: usize) -> AxisBox {
        let coords = self.cell_coords(index);
        let widths = self.widths();
        AxisBox::new(
            coords
                .iter()
                .zip(&self.state_box.bounds)
                .zip(&widths)
                .map(|((c, b), w)| {
                    let lo = b[0] + w * *c as f64;
                    [lo, lo + w]
                })
                .collect(),
        )
    }

    /// Cell center.
    pub fn representative(&self, index: usize) -> Vec<f64> {
        let coords = self.cell_coords(index);
        let widths = self.widths();
        coords
            .iter()
            .zip(&self.state_box.bounds)
            .zip(&widths)
            .map(|((c, b), w)| b[0] + w * (*c as f64 + 0.5))
            .collect()
    }

    /// Cell containing `x`, or `None` outside the state box.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        if !self.state_box.contains(x) {
            return None;
        }
        let widths = self.widths();
        let coords: Vec<usize> = x
            .iter()
            .zip(&self.state_box.bounds)
            .zip(&widths)
            .zip(&self.cells_per_dim)
            .map(|(((v, b), w), n)| (((v - b[0]) / w) as usize).min(n - 1))
            .collect();
        Some(self.cell_index(&coords))
    }
}

/// Per-component, per-axis interval-mass factors for every
/// (cell, external input, internal input) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTensor {
    pub n_rows: usize,
    pub components: usize,
    pub weights: Vec<f64>,
    pub cells_per_dim: Vec<usize>,
    /// `factors[row][k][axis-concatenated cells]`, flattened.
    pub factors: Vec<f64>,
    /// Total interior mass per row; the sink takes the complement.
    pub interior_mass: Vec<f64>,
}

impl TransitionTensor {
    fn row_stride(&self) -> usize {
        self.components * self.cells_per_dim.iter().sum::<usize>()
    }

    fn factor_slice(&self, row: usize, k: usize, dim: usize) -> &[f64] {
        let per_comp: usize = self.cells_per_dim.iter().sum();
        let base = row * self.row_stride() + k * per_comp;
        let offset: usize = self.cells_per_dim[..dim].iter().sum();
        &self.factors[base + offset..base + offset + self.cells_per_dim[dim]]
    }

    /// Probability of landing in `target` cell from `row`.
    pub fn prob(&self, row: usize, target: usize) -> f64 {
        let mut coords = vec![0usize; self.cells_per_dim.len()];
        let mut idx = target;
        for d in (0..self.cells_per_dim.len()).rev() {
            coords[d] = idx % self.cells_per_dim[d];
            idx /= self.cells_per_dim[d];
        }
        (0..self.components)
            .map(|k| {
                self.weights[k]
                    * coords
                        .iter()
                        .enumerate()
                        .map(|(d, c)| self.factor_slice(row, k, d)[*c])
                        .product::<f64>()
            })
            .sum()
    }

    pub fn sink_prob(&self, row: usize) -> f64 {
        (1.0 - self.interior_mass[row]).max(0.0)
    }

    /// `sum over cells of P[row][cell] * values[cell]` (the sink contributes
    /// nothing). `values` is laid out cell-major like the grid.
    pub fn expected_value(&self, row: usize, values: &[f64]) -> f64 {
        let n_dims = self.cells_per_dim.len();
        let mut total = 0.0;
        let mut buf: Vec<f64> = Vec::new();
        for k in 0..self.components {
            buf.clear();
            buf.extend_from_slice(values);
            let mut len = buf.len();
            for d in (0..n_dims).rev() {
                let c = self.cells_per_dim[d];
                let fac = self.factor_slice(row, k, d);
                let blocks = len / c;
                for b in 0..blocks {
                    let mut acc = 0.0;
                    for (i, f) in fac.iter().enumerate() {
                        acc += buf[b * c + i] * f;
                    }
                    buf[b] = acc;
                }
                len = blocks;
            }
            total += self.weights[k] * buf[0];
        }
        total
    }

    /// Interior mass plus sink; must be 1 up to rounding.
    pub fn row_total(&self, row: usize) -> f64 {
        self.interior_mass[row] + self.sink_prob(row)
    }
}

/// Finite abstraction: grid geometry, input lattices, transition tensor,
/// and the discretization certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridAbstraction {
    pub geometry: GridGeometry,
    /// External input lattice points (full vectors), row-major over axes.
    pub ext_inputs: Vec<Vec<f64>>,
    /// Internal input lattice points; a single empty vector when the
    /// subsystem has no internal inputs.
    pub int_inputs: Vec<Vec<f64>>,
    pub transitions: Option<TransitionTensor>,
    pub cert: Option<SsrCertificate>,
}

impl GridAbstraction {
    pub fn table_shape(&self) -> TableShape {
        TableShape {
            states: self.geometry.n_cells(),
            ext_inputs: self.ext_inputs.len(),
            int_inputs: self.int_inputs.len(),
        }
    }

    pub fn row_index(&self, cell: usize, ext: usize, int: usize) -> usize {
        self.table_shape().index(cell, ext, int)
    }

    /// Concatenated input vector for expression evaluation.
    pub fn input_vector(&self, ext: usize, int: usize) -> Vec<f64> {
        let mut u = self.ext_inputs[ext].clone();
        u.extend_from_slice(&self.int_inputs[int]);
        u
    }

    pub fn transitions(&self) -> Result<&TransitionTensor, GridError> {
        self.transitions.as_ref().ok_or(GridError::TransitionsMissing)
    }
}

/// Builds the partition and input lattices (no transitions yet).
pub fn build_grid(
    s: &Subsystem,
    cells_per_dim: &[usize],
    ext_points_per_dim: &[usize],
    internal_box: Option<AxisBox>,
    int_points_per_dim: &[usize],
) -> Result<GridAbstraction, GridError> {
    let n = s.state_dim();
    if cells_per_dim.len() != n {
        return Err(GridError::CountMismatch {
            context: "cells per dimension",
            expected: n,
            actual: cells_per_dim.len(),
        });
    }
    for (axis, b) in s.state_box.bounds.iter().enumerate() {
        if b[1] <= b[0] {
            return Err(GridError::DegenerateBox(axis));
        }
    }
    if cells_per_dim.iter().any(|c| *c == 0) || ext_points_per_dim.iter().any(|c| *c == 0) {
        return Err(GridError::ZeroCount);
    }
    let ext_dim = s.external_input_box.dim();
    if ext_points_per_dim.len() != ext_dim {
        return Err(GridError::CountMismatch {
            context: "external input points per dimension",
            expected: ext_dim,
            actual: ext_points_per_dim.len(),
        });
    }
    let ext_inputs = lattice_points(&s.external_input_box, ext_points_per_dim);
    let int_box = internal_box.unwrap_or_else(|| s.internal_input_box());
    let int_dim = int_box.dim();
    if int_points_per_dim.len() != int_dim {
        return Err(GridError::CountMismatch {
            context: "internal input points per dimension",
            expected: int_dim,
            actual: int_points_per_dim.len(),
        });
    }
    if int_points_per_dim.iter().any(|c| *c == 0) {
        return Err(GridError::ZeroCount);
    }
    let int_inputs = lattice_points(&int_box, int_points_per_dim);
    Ok(GridAbstraction {
        geometry: GridGeometry {
            state_box: s.state_box.clone(),
            cells_per_dim: cells_per_dim.to_vec(),
        },
        ext_inputs,
        int_inputs,
        transitions: None,
        cert: None,
    })
}

fn lattice_points(bx: &AxisBox, points_per_dim: &[usize]) -> Vec<Vec<f64>> {
    if bx.dim() == 0 {
        return vec![vec![]];
    }
    let axes: Vec<Vec<f64>> = bx
        .bounds
        .iter()
        .zip(points_per_dim)
        .map(|(b, p)| lattice_axis(b[0], b[1], *p))
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

/// Fills the transition tensor of the nominal model:
/// `P[cell,u][cell'] = sum_k pi_hat_k prod_d [Phi((hi-m)/sigma) - Phi((lo-m)/sigma)]`
/// with `m = f(rep(cell), u; theta_hat) + mu_hat_k`; the sink absorbs the
/// complement.
pub fn transition_tensor(g: &mut GridAbstraction, s: &Subsystem) -> Result<(), GridError> {
    let nominal = s.nominal_mixture();
    let mut stds: Vec<Vec<f64>> = Vec::new();
    for (k, cov) in nominal.covariances().iter().enumerate() {
        match cov {
            Covariance::Diagonal(v) => stds.push(v.iter().map(|x| x.sqrt()).collect()),
            Covariance::Full(_) => return Err(GridError::NonDiagonalCovariance(k)),
        }
    }
    let geom = g.geometry.clone();
    let n_dims = geom.dim();
    let widths = geom.widths();
    let k_count = nominal.component_count();
    let per_comp: usize = geom.cells_per_dim.iter().sum();
    let shape = g.table_shape();
    let n_rows = shape.len();
    let n_int = g.int_inputs.len();
    let n_ext = g.ext_inputs.len();

    struct RowOut {
        factors: Vec<f64>,
        interior: f64,
    }
    let means_hat = nominal.means();
    let weights = nominal.weights().to_vec();
    let rows: Vec<Result<RowOut, GridError>> = par::map_indexed(n_rows, |row| {
        let int = row % n_int;
        let ext = (row / n_int) % n_ext;
        let cell = row / (n_int * n_ext);
        let rep = geom.representative(cell);
        let u = g.input_vector(ext, int);
        let drift = s.eval_dynamics(&rep, &u, &s.theta_nominal)?;
        let mut factors = vec![0.0; k_count * per_comp];
        let mut interior = 0.0;
        for k in 0..k_count {
            let mut comp_mass = 1.0;
            let mut offset = 0;
            for d in 0..n_dims {
                let m = drift[d] + means_hat[k][d];
                let sd = stds[k][d];
                let lo0 = geom.state_box.bounds[d][0];
                let mut dim_sum = 0.0;
                for c in 0..geom.cells_per_dim[d] {
                    let lo = lo0 + widths[d] * c as f64;
                    let hi = lo + widths[d];
                    let mass = normal_interval_mass((lo - m) / sd, (hi - m) / sd);
                    factors[k * per_comp + offset + c] = mass;
                    dim_sum += mass;
                }
                comp_mass *= dim_sum;
                offset += geom.cells_per_dim[d];
            }
            interior += weights[k] * comp_mass;
        }
        Ok(RowOut { factors, interior })
    });

    let mut factors = Vec::with_capacity(n_rows * k_count * per_comp);
    let mut interior_mass = Vec::with_capacity(n_rows);
    for r in rows {
        let r = r?;
        factors.extend_from_slice(&r.factors);
        interior_mass.push(r.interior.min(1.0));
    }
    g.transitions = Some(TransitionTensor {
        n_rows,
        components: k_count,
        weights,
        cells_per_dim: geom.cells_per_dim.clone(),
        factors,
        interior_mass,
    });
    Ok(())
}

/// Discretization certificate for the grid relation `x in cell(x_hat)`.
///
/// The nominal pair is coupled by shifting the shared noise with
/// `gamma_2 = f(x,u;theta_hat) - f(x_hat,u;theta_hat)`, which makes the two
/// successors coincide exactly; the per-step deficit of that shift is
/// `delta_2 = sup_{x in cell} sum_k pi_hat_k (1 - 2 Phi(-||L_k^{-1} gamma_2||/2))`,
/// with the supremum taken over cell corners plus center. The output bound
/// is `eps_2 = max over cell offsets of ||h-image||` (half cell diagonal
/// for the identity output).
pub fn discretization_certificate(
    g: &GridAbstraction,
    s: &Subsystem,
) -> Result<SsrCertificate, GridError> {
    if g.transitions.is_none() {
        return Err(GridError::TransitionsMissing);
    }
    let geom = &g.geometry;
    let widths = geom.widths();
    let half: Vec<f64> = widths.iter().map(|w| 0.5 * w).collect();
    // corner offsets of one cell around its center (uniform grid: identical
    // for every cell), plus the center itself
    let offset_box = AxisBox::new(half.iter().map(|h| [-h, *h]).collect());
    let mut offsets = offset_box.corners();
    offsets.push(vec![0.0; geom.dim()]);

    let epsilon = offsets
        .iter()
        .map(|d| {
            let y = match &s.output_map {
                crate::system::OutputMap::Identity => d.clone(),
                crate::system::OutputMap::Select(idx) => idx.iter().map(|i| d[*i]).collect(),
                crate::system::OutputMap::Affine { matrix, .. } => matrix
                    .iter()
                    .map(|row| crate::linalg::dot(row, d))
                    .collect::<Vec<f64>>(),
            };
            crate::linalg::norm(&y)
        })
        .fold(0.0, f64::max);

    let nominal = s.nominal_mixture();
    let weights = nominal.weights().to_vec();
    let shape = g.table_shape();
    let n_int = g.int_inputs.len();
    let n_ext = g.ext_inputs.len();
    let geom2 = geom.clone();
    let values: Vec<Result<f64, GridError>> = par::map_indexed(shape.len(), |row| {
        let int = row % n_int;
        let ext = (row / n_int) % n_ext;
        let cell = row / (n_int * n_ext);
        let rep = geom2.representative(cell);
        let u = g.input_vector(ext, int);
        let f_rep = s.eval_dynamics(&rep, &u, &s.theta_nominal)?;
        let mut worst: f64 = 0.0;
        for off in &offsets {
            let x: Vec<f64> = rep.iter().zip(off).map(|(r, o)| r + o).collect();
            let f_x = s.eval_dynamics(&x, &u, &s.theta_nominal)?;
            let gamma2 = crate::linalg::sub(&f_x, &f_rep);
            let deficit: f64 = weights
                .iter()
                .enumerate()
                .map(|(k, pi)| pi * k1_deficit(nominal.whitened_norm(k, &gamma2)))
                .sum();
            worst = worst.max(deficit);
        }
        Ok(worst.clamp(0.0, 1.0))
    });
    let mut table = Vec::with_capacity(values.len());
    for v in values {
        table.push(v?);
    }
    Ok(SsrCertificate::new(
        format!("discretization:{}", s.id),
        RelationKind::GridRelation,
        epsilon,
        DeltaProfile::Table {
            shape,
            values: table,
        },
        vec![],
    )?)
}
