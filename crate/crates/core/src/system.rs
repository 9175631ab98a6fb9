//! Parametric subsystem dynamics: the state update `f(x, u; theta) + w`,
//! the nominal model at `theta_hat`, the coupling offset
//! `gamma = f(x,u;theta) - f(x,u;theta_hat)`, the worst-case whitened offset
//! over the parameter box, and the theta-free state refinement map.

use crate::expr::{DynamicsExpr, ExprError};
use crate::gmm::{Covariance, CouplingPair, GaussianMixture, GmmError};
use crate::linalg;
use crate::AxisBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("subsystem `{id}`, state coordinate {coordinate}: {source}")]
    Eval {
        id: String,
        coordinate: usize,
        source: ExprError,
    },
    #[error("subsystem `{id}`: {context}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        id: String,
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("subsystem `{id}`: nominal parameter lies outside the parameter box")]
    NominalOutsideBox { id: String },
    #[error("subsystem `{id}`: output image of the state box leaves the output box on axis {axis}")]
    OutputEscapesBox { id: String, axis: usize },
    #[error("subsystem `{id}`: noise model: {source}")]
    Noise {
        id: String,
        #[source]
        source: GmmError,
    },
    #[error(
        "subsystem `{id}`: parameter dimension {dim} > 20; vertex enumeration refused, configure an explicit lattice"
    )]
    TooManyVertices { id: String, dim: usize },
    #[error("subsystem `{id}`: worst-case search would evaluate {candidates} candidates (cap {cap})")]
    SearchTooLarge {
        id: String,
        candidates: usize,
        cap: usize,
    },
}

/// A mixture mean (or weight) coordinate: a constant or a binding to one
/// entry of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamEntry {
    Const(f64),
    Bound { theta: usize },
}

impl ParamEntry {
    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            ParamEntry::Const(v) => *v,
            ParamEntry::Bound { theta: i } => theta[*i],
        }
    }

    fn max_theta_index(&self) -> Option<usize> {
        match self {
            ParamEntry::Const(_) => None,
            ParamEntry::Bound { theta } => Some(*theta),
        }
    }
}

/// Parametric Gaussian mixture family: weights and mean coordinates may bind
/// to parameter entries, covariances are fixed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    pub weights: Vec<ParamEntry>,
    pub means: Vec<Vec<ParamEntry>>,
    pub covariances: Vec<Covariance>,
}

impl NoiseModel {
    pub fn mixture_at(&self, theta: &[f64]) -> Result<GaussianMixture, GmmError> {
        let weights = self.weights.iter().map(|w| w.value(theta)).collect();
        let means = self
            .means
            .iter()
            .map(|m| m.iter().map(|e| e.value(theta)).collect())
            .collect();
        GaussianMixture::new(weights, means, self.covariances.clone())
    }

    pub fn weights_theta_bound(&self) -> bool {
        self.weights
            .iter()
            .any(|w| matches!(w, ParamEntry::Bound { .. }))
    }

    fn max_theta_index(&self) -> Option<usize> {
        self.weights
            .iter()
            .chain(self.means.iter().flatten())
            .filter_map(|e| e.max_theta_index())
            .max()
    }
}

/// Observation map `y = h(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMap {
    Identity,
    /// Pick the listed state coordinates.
    Select(Vec<usize>),
    /// `y = A x + b`.
    Affine {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

impl OutputMap {
    pub fn output_dim(&self, state_dim: usize) -> usize {
        match self {
            OutputMap::Identity => state_dim,
            OutputMap::Select(idx) => idx.len(),
            OutputMap::Affine { matrix, .. } => matrix.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            OutputMap::Identity => x.to_vec(),
            OutputMap::Select(idx) => idx.iter().map(|i| x[*i]).collect(),
            OutputMap::Affine { matrix, offset } => matrix
                .iter()
                .zip(offset)
                .map(|(row, b)| linalg::dot(row, x) + b)
                .collect(),
        }
    }

    /// Interval image of a box (exact for these map shapes).
    pub fn image_box(&self, state_box: &AxisBox) -> AxisBox {
        match self {
            OutputMap::Identity => state_box.clone(),
            OutputMap::Select(idx) => {
                AxisBox::new(idx.iter().map(|i| state_box.bounds[*i]).collect())
            }
            OutputMap::Affine { matrix, offset } => AxisBox::new(
                matrix
                    .iter()
                    .zip(offset)
                    .map(|(row, b)| {
                        let mut lo = *b;
                        let mut hi = *b;
                        for (a, bounds) in row.iter().zip(&state_box.bounds) {
                            let (p, q) = (a * bounds[0], a * bounds[1]);
                            lo += p.min(q);
                            hi += p.max(q);
                        }
                        [lo, hi]
                    })
                    .collect(),
            ),
        }
    }
}

/// One internal input channel: which subsystem feeds it, which coordinates
/// of that subsystem's output arrive, and the declared bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InternalInput {
    pub source: String,
    pub source_output_dims: Vec<usize>,
    pub bounds: AxisBox,
}

/// Worst-case whitened offset of one mixture component over the parameter
/// box.
#[derive(Debug, Clone)]
pub struct SupComponent {
    /// `sup over theta of || L_k^{-1} beta_k(theta) ||`.
    pub norm: f64,
    pub maximizer: Vec<f64>,
}

/// Candidate-set configuration for the parameter-box supremum: all box
/// vertices (exact for offsets affine in theta) plus an evenly spaced
/// lattice. Above 20 parameter dimensions vertex enumeration is refused and
/// an explicit lattice must be requested.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SupSearch {
    pub lattice_points: usize,
    /// Set when the caller explicitly chose the lattice (required for
    /// high-dimensional parameter boxes).
    pub explicit_lattice: bool,
}

impl Default for SupSearch {
    fn default() -> Self {
        Self {
            lattice_points: 3,
            explicit_lattice: false,
        }
    }
}

const SEARCH_CANDIDATE_CAP: usize = 2_000_000;

/// An uncertain subsystem: parametric dynamics, output map, parametric GMM
/// noise, the parameter box with its nominal point, and the operating boxes.
/// Immutable after construction; every operation is a pure function.
#[derive(Debug, Clone)]
pub struct Subsystem {
    pub id: String,
    pub dynamics: Vec<DynamicsExpr>,
    pub output_map: OutputMap,
    pub noise: NoiseModel,
    pub theta_box: AxisBox,
    pub theta_nominal: Vec<f64>,
    pub state_box: AxisBox,
    pub external_input_box: AxisBox,
    pub internal_inputs: Vec<InternalInput>,
    pub output_box: AxisBox,
    nominal_mixture: GaussianMixture,
}

impl Subsystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        dynamics: Vec<DynamicsExpr>,
        output_map: OutputMap,
        noise: NoiseModel,
        theta_box: AxisBox,
        theta_nominal: Vec<f64>,
        state_box: AxisBox,
        external_input_box: AxisBox,
        internal_inputs: Vec<InternalInput>,
        output_box: AxisBox,
    ) -> Result<Self, SystemError> {
        let state_dim = state_box.dim();
        let err_dim = |context, expected, actual| SystemError::DimensionMismatch {
            id: id.clone(),
            context,
            expected,
            actual,
        };
        if dynamics.len() != state_dim {
            return Err(err_dim("dynamics coordinates", state_dim, dynamics.len()));
        }
        let theta_dim = theta_box.dim();
        if theta_nominal.len() != theta_dim {
            return Err(err_dim("nominal parameter", theta_dim, theta_nominal.len()));
        }
        if !theta_box.contains(&theta_nominal) {
            return Err(SystemError::NominalOutsideBox { id });
        }
        let input_dim = external_input_box.dim()
            + internal_inputs.iter().map(|i| i.bounds.dim()).sum::<usize>();
        for (coordinate, d) in dynamics.iter().enumerate() {
            d.validate_indices(state_dim, input_dim, theta_dim)
                .map_err(|source| SystemError::Eval {
                    id: id.clone(),
                    coordinate,
                    source,
                })?;
        }
        for ii in &internal_inputs {
            if ii.source_output_dims.len() != ii.bounds.dim() {
                return Err(err_dim(
                    "internal input coordinates vs bounds",
                    ii.bounds.dim(),
                    ii.source_output_dims.len(),
                ));
            }
        }
        if noise.means.iter().any(|m| m.len() != state_dim)
            || noise.covariances.iter().any(|c| c.dim() != state_dim)
        {
            return Err(err_dim("noise dimension", state_dim, 0));
        }
        if let Some(max) = noise.max_theta_index() {
            if max >= theta_dim {
                return Err(err_dim("noise parameter binding", theta_dim, max + 1));
            }
        }
        let output_dim = output_map.output_dim(state_dim);
        if output_box.dim() != output_dim {
            return Err(err_dim("output box", output_dim, output_box.dim()));
        }
        let image = output_map.image_box(&state_box);
        for (axis, (img, out)) in image.bounds.iter().zip(&output_box.bounds).enumerate() {
            // tiny slack for affine interval rounding
            if img[0] < out[0] - 1e-9 || img[1] > out[1] + 1e-9 {
                return Err(SystemError::OutputEscapesBox { id, axis });
            }
        }
        let nominal_mixture =
            noise
                .mixture_at(&theta_nominal)
                .map_err(|source| SystemError::Noise {
                    id: id.clone(),
                    source,
                })?;
        Ok(Self {
            id,
            dynamics,
            output_map,
            noise,
            theta_box,
            theta_nominal,
            state_box,
            external_input_box,
            internal_inputs,
            output_box,
            nominal_mixture,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    /// External plus internal input dimension, in expression `u[...]` order.
    pub fn input_dim(&self) -> usize {
        self.external_input_box.dim()
            + self
                .internal_inputs
                .iter()
                .map(|i| i.bounds.dim())
                .sum::<usize>()
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_box.dim()
    }

    /// Box over the concatenated internal inputs (empty box for none).
    pub fn internal_input_box(&self) -> AxisBox {
        AxisBox::new(
            self.internal_inputs
                .iter()
                .flat_map(|i| i.bounds.bounds.iter().copied())
                .collect(),
        )
    }

    /// GMM of the nominal model.
    pub fn nominal_mixture(&self) -> &GaussianMixture {
        &self.nominal_mixture
    }

    pub fn mixture_at(&self, theta: &[f64]) -> Result<GaussianMixture, SystemError> {
        self.noise
            .mixture_at(theta)
            .map_err(|source| SystemError::Noise {
                id: self.id.clone(),
                source,
            })
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.output_map.apply(x)
    }

    /// Deterministic part of the state update.
    pub fn eval_dynamics(
        &self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
    ) -> Result<Vec<f64>, SystemError> {
        self.check_dims(x, u)?;
        self.dynamics
            .iter()
            .enumerate()
            .map(|(coordinate, d)| {
                d.eval(x, u, theta).map_err(|source| SystemError::Eval {
                    id: self.id.clone(),
                    coordinate,
                    source,
                })
            })
            .collect()
    }

    /// Coupling offset `gamma = f(x,u;theta) - f(x,u;theta_hat)`.
    pub fn gamma_offset(
        &self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
    ) -> Result<Vec<f64>, SystemError> {
        let ft = self.eval_dynamics(x, u, theta)?;
        let fnom = self.eval_dynamics(x, u, &self.theta_nominal)?;
        Ok(linalg::sub(&ft, &fnom))
    }

    /// Abstract successor for online refinement:
    /// `x_hat_next = x_next - f(x,u;theta_hat) + f(x_hat,u_hat;theta_hat)`.
    /// By construction this never reads the true parameter.
    pub fn refine_state(
        &self,
        x_next: &[f64],
        x: &[f64],
        x_hat: &[f64],
        u: &[f64],
        u_hat: &[f64],
    ) -> Result<Vec<f64>, SystemError> {
        let f_concrete = self.eval_dynamics(x, u, &self.theta_nominal)?;
        let f_abstract = self.eval_dynamics(x_hat, u_hat, &self.theta_nominal)?;
        Ok(linalg::add(&linalg::sub(x_next, &f_concrete), &f_abstract))
    }

    /// Candidate parameter values for the box supremum: nominal, box
    /// vertices (when feasible), and the lattice.
    pub fn theta_candidates(&self, search: SupSearch) -> Result<Vec<Vec<f64>>, SystemError> {
        let p = self.theta_dim();
        if p == 0 {
            return Ok(vec![vec![]]);
        }
        let mut cands = vec![self.theta_nominal.clone()];
        if p > 20 {
            if !search.explicit_lattice {
                return Err(SystemError::TooManyVertices {
                    id: self.id.clone(),
                    dim: p,
                });
            }
        } else {
            cands.extend(self.theta_box.corners());
        }
        let lattice_size = search
            .lattice_points
            .checked_pow(p.min(64) as u32)
            .unwrap_or(usize::MAX);
        if lattice_size.saturating_add(cands.len()) > SEARCH_CANDIDATE_CAP {
            return Err(SystemError::SearchTooLarge {
                id: self.id.clone(),
                candidates: lattice_size,
                cap: SEARCH_CANDIDATE_CAP,
            });
        }
        if search.lattice_points > 2 {
            cands.extend(self.theta_box.lattice(search.lattice_points));
        }
        Ok(cands)
    }

    /// Per-component worst case of `|| L_k^{-1} beta_k(theta) ||` over the
    /// candidate set, where `beta_k = mu_k(theta) - mu_k(theta_hat) + gamma`.
    /// Exact for dynamics and means affine in theta (convex maximization
    /// attains the box vertices).
    pub fn sup_gamma_norm(
        &self,
        x: &[f64],
        u: &[f64],
        search: SupSearch,
    ) -> Result<Vec<SupComponent>, SystemError> {
        let candidates = self.theta_candidates(search)?;
        self.sup_gamma_norm_over(x, u, &candidates)
    }

    /// Same supremum over an explicit candidate list.
    pub fn sup_gamma_norm_over(
        &self,
        x: &[f64],
        u: &[f64],
        candidates: &[Vec<f64>],
    ) -> Result<Vec<SupComponent>, SystemError> {
        let nominal = &self.nominal_mixture;
        let nominal_means = nominal.means().to_vec();
        let k_count = nominal.component_count();
        let mut out: Vec<SupComponent> = (0..k_count)
            .map(|_| SupComponent {
                norm: f64::NEG_INFINITY,
                maximizer: Vec::new(),
            })
            .collect();
        for theta in candidates {
            let gamma = self.gamma_offset(x, u, theta)?;
            for (k, comp) in out.iter_mut().enumerate() {
                let mut beta = gamma.clone();
                for (d, entry) in self.noise.means[k].iter().enumerate() {
                    beta[d] += entry.value(theta) - nominal_means[k][d];
                }
                let b = nominal.whitened_norm(k, &beta);
                if b > comp.norm {
                    comp.norm = b;
                    comp.maximizer = theta.clone();
                }
            }
        }
        Ok(out)
    }

    /// The coupled noise pair at a fixed parameter: true mixture against the
    /// nominal one, with the dynamics offset folded in.
    pub fn coupling_pair_at(
        &self,
        x: &[f64],
        u: &[f64],
        theta: &[f64],
    ) -> Result<CouplingPair, SystemError> {
        let gamma = self.gamma_offset(x, u, theta)?;
        let left = self.mixture_at(theta)?;
        CouplingPair::new(left, self.nominal_mixture.clone(), gamma).map_err(|source| {
            SystemError::Noise {
                id: self.id.clone(),
                source,
            }
        })
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<(), SystemError> {
        if x.len() != self.state_dim() {
            return Err(SystemError::DimensionMismatch {
                id: self.id.clone(),
                context: "state argument",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(SystemError::DimensionMismatch {
                id: self.id.clone(),
                context: "input argument",
                expected: self.input_dim(),
                actual: u.len(),
            });
        }
        Ok(())
    }
}

/// Convenience constructor: single-component unit-variance noise, identity
/// output, no internal inputs. Used by the toy systems in the test suites.
pub fn simple_subsystem(
    id: &str,
    dynamics: Vec<&str>,
    state_box: AxisBox,
    input_box: AxisBox,
    theta_box: AxisBox,
    theta_nominal: Vec<f64>,
) -> Result<Subsystem, SystemError> {
    let n = state_box.dim();
    let exprs: Vec<DynamicsExpr> = dynamics
        .into_iter()
        .map(|t| DynamicsExpr::parse(t).expect("dynamics text must parse"))
        .collect();
    let output_box = state_box.clone();
    Subsystem::new(
        id.into(),
        exprs,
        OutputMap::Identity,
        NoiseModel {
            weights: vec![ParamEntry::Const(1.0)],
            means: vec![vec![ParamEntry::Const(0.0); n]],
            covariances: vec![Covariance::Diagonal(vec![1.0; n])],
        },
        theta_box,
        theta_nominal,
        state_box,
        input_box,
        vec![],
        output_box,
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn const_entries(v: &[f64]) -> Vec<ParamEntry> {
        v.iter().map(|x| ParamEntry::Const(*x)).collect()
    }

    /// Package-delivery style subsystem:
    /// theta = (gain, mu1x, mu1y, mu2x, mu2y).
    pub(crate) fn delivery_subsystem() -> Subsystem {
        Subsystem::new(
            "agent".into(),
            vec![
                DynamicsExpr::parse("0.9*x[0] + 0.6*sin(0.1*x[1]) + 1.7*theta[0]*u[0]").unwrap(),
                DynamicsExpr::parse("0.9*x[1] + 1.7*u[1]").unwrap(),
            ],
            OutputMap::Identity,
            NoiseModel {
                weights: const_entries(&[0.8, 0.2]),
                means: vec![
                    vec![ParamEntry::Bound { theta: 1 }, ParamEntry::Bound { theta: 2 }],
                    vec![ParamEntry::Bound { theta: 3 }, ParamEntry::Bound { theta: 4 }],
                ],
                covariances: vec![
                    Covariance::Diagonal(vec![0.2f64.sqrt(), 0.2f64.sqrt()]),
                    Covariance::Diagonal(vec![0.2f64.sqrt(), 0.2f64.sqrt()]),
                ],
            },
            AxisBox::new(vec![
                [0.95, 1.05],
                [-0.01, 0.01],
                [0.79, 0.81],
                [-0.81, -0.79],
                [-0.81, -0.79],
            ]),
            vec![0.99, 0.0, 0.8, -0.8, -0.8],
            AxisBox::new(vec![[-6.0, 6.0], [-6.0, 6.0]]),
            AxisBox::new(vec![[-1.0, 1.0], [-1.0, 1.0]]),
            vec![],
            AxisBox::new(vec![[-6.0, 6.0], [-6.0, 6.0]]),
        )
        .unwrap()
    }

    fn leader_subsystem() -> Subsystem {
        // theta = (mass, mu1s, mu1v, mu2s, mu2v)
        Subsystem::new(
            "leader".into(),
            vec![
                DynamicsExpr::parse("x[0] + 0.5*x[1]").unwrap(),
                DynamicsExpr::parse("0.9*x[1] + 0.5*u[0]/theta[0]").unwrap(),
            ],
            OutputMap::Identity,
            NoiseModel {
                weights: const_entries(&[0.3, 0.7]),
                means: vec![
                    vec![ParamEntry::Bound { theta: 1 }, ParamEntry::Bound { theta: 2 }],
                    vec![ParamEntry::Bound { theta: 3 }, ParamEntry::Bound { theta: 4 }],
                ],
                covariances: vec![
                    Covariance::Diagonal(vec![0.05, 0.025]),
                    Covariance::Diagonal(vec![0.05, 0.025]),
                ],
            },
            AxisBox::new(vec![
                [3.9, 4.1],
                [0.09, 0.11],
                [-0.01, 0.01],
                [-0.01, 0.01],
                [-0.01, 0.01],
            ]),
            vec![4.0, 0.1, 0.0, 0.0, 0.0],
            AxisBox::new(vec![[0.0, 5.0], [0.95, 1.05]]),
            AxisBox::new(vec![[0.3, 1.0]]),
            vec![],
            AxisBox::new(vec![[0.0, 5.0], [0.95, 1.05]]),
        )
        .unwrap()
    }

    #[test]
    fn delivery_dynamics_fixed_point_and_hand_values() {
        let s = delivery_subsystem();
        let th = [1.0, 0.0, 0.8, -0.8, -0.8];
        assert_eq!(
            s.eval_dynamics(&[0.0, 0.0], &[0.0, 0.0], &th).unwrap(),
            vec![0.0, 0.0]
        );
        let v = s.eval_dynamics(&[1.0, 0.0], &[0.0, 0.0], &th).unwrap();
        assert!((v[0] - 0.9).abs() < 1e-15 && v[1].abs() < 1e-15);
    }

    #[test]
    fn leader_dynamics_hand_value() {
        let s = leader_subsystem();
        let v = s
            .eval_dynamics(&[1.0, 1.0], &[1.0], &[4.0, 0.1, 0.0, 0.0, 0.0])
            .unwrap();
        assert!((v[0] - 1.5).abs() < 1e-15);
        assert!((v[1] - 1.025).abs() < 1e-15);
    }

    #[test]
    fn gamma_vanishes_at_nominal() {
        let s = delivery_subsystem();
        let g = s
            .gamma_offset(&[0.3, -0.7], &[0.5, -0.5], &[0.99, 0.0, 0.8, -0.8, -0.8])
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gamma_delivery_hand_value() {
        let s = delivery_subsystem();
        let g = s
            .gamma_offset(&[0.0, 0.0], &[1.0, 0.0], &[1.05, 0.0, 0.8, -0.8, -0.8])
            .unwrap();
        assert!((g[0] - 1.7 * 0.06).abs() < 1e-12, "{g:?}");
        assert!(g[1].abs() < 1e-15);
    }

    #[test]
    fn gamma_leader_is_state_independent() {
        let s = leader_subsystem();
        let theta = [4.1, 0.1, 0.0, 0.0, 0.0];
        let expected_v = 0.5 * 1.0 * (1.0 / 4.1 - 1.0 / 4.0);
        for x in [[0.0, 1.0], [2.5, 0.97], [5.0, 1.05]] {
            let g = s.gamma_offset(&x, &[1.0], &theta).unwrap();
            assert!(g[0].abs() < 1e-15);
            assert!((g[1] - expected_v).abs() < 1e-14, "{g:?}");
        }
    }

    #[test]
    fn gamma_is_affine_in_theta_for_affine_dynamics() {
        // dynamics affine in theta[0] (inverse-mass parametrization)
        let s = simple_subsystem(
            "affine",
            vec!["0.9*x[0] + 0.5*u[0]*theta[0]"],
            AxisBox::new(vec![[-10.0, 10.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[0.2, 0.3]]),
            vec![0.25],
        )
        .unwrap();
        let (a, b, alpha) = ([0.22], [0.29], 0.3);
        let mix = [alpha * a[0] + (1.0 - alpha) * b[0]];
        let ga = s.gamma_offset(&[1.0], &[0.7], &a).unwrap()[0];
        let gb = s.gamma_offset(&[1.0], &[0.7], &b).unwrap()[0];
        let gm = s.gamma_offset(&[1.0], &[0.7], &mix).unwrap()[0];
        assert!((gm - (alpha * ga + (1.0 - alpha) * gb)).abs() < 1e-14);
    }

    #[test]
    fn refine_state_is_identity_on_matching_pairs() {
        let s = delivery_subsystem();
        let x = [1.2, -0.4];
        let u = [0.3, 0.8];
        let next = [2.0, 0.5];
        let refined = s.refine_state(&next, &x, &x, &u, &u).unwrap();
        assert!(refined
            .iter()
            .zip(&next)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn refine_state_direct_arithmetic() {
        // f(x,u;th_hat) = [0.5;0.5] at u=0, f(xh,uh;th_hat) = [0.3;0.2] at u=1
        let s = simple_subsystem(
            "const",
            vec!["0.5 - 0.2*u[0]", "0.5 - 0.3*u[0]"],
            AxisBox::new(vec![[-5.0, 5.0], [-5.0, 5.0]]),
            AxisBox::new(vec![[0.0, 1.0]]),
            AxisBox::new(vec![[0.0, 0.0]]),
            vec![0.0],
        )
        .unwrap();
        let refined = s
            .refine_state(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0], &[1.0])
            .unwrap();
        assert!((refined[0] - 0.8).abs() < 1e-15);
        assert!((refined[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn refinement_never_reads_theta() {
        // the refinement signature carries no theta; the same x_next always
        // refines to the same abstract successor
        let s = delivery_subsystem();
        let (x, u) = ([0.5, 0.5], [1.0, -1.0]);
        let x_next = [1.9, 0.1];
        let base = s
            .refine_state(&x_next, &x, &[0.4, 0.4], &u, &[0.9, -0.9])
            .unwrap();
        for theta in [
            [0.95, -0.01, 0.79, -0.81, -0.81],
            [1.05, 0.01, 0.81, -0.79, -0.79],
        ] {
            let _ = s.eval_dynamics(&x, &u, &theta).unwrap();
            let again = s
                .refine_state(&x_next, &x, &[0.4, 0.4], &u, &[0.9, -0.9])
                .unwrap();
            assert_eq!(again, base);
        }
    }

    #[test]
    fn sup_on_singleton_box_returns_that_point() {
        let s = simple_subsystem(
            "point",
            vec!["theta[0]*u[0]"],
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[1.02, 1.02]]),
            vec![1.02],
        )
        .unwrap();
        let sup = s
            .sup_gamma_norm(&[0.0], &[1.0], SupSearch::default())
            .unwrap();
        assert_eq!(sup[0].norm, 0.0);
        assert_eq!(sup[0].maximizer, vec![1.02]);
    }

    #[test]
    fn sup_affine_scalar_hits_the_vertex() {
        let s = simple_subsystem(
            "scalar",
            vec!["theta[0]*u[0]"],
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[0.95, 1.05]]),
            vec![1.0],
        )
        .unwrap();
        let sup = s
            .sup_gamma_norm(&[0.0], &[1.0], SupSearch::default())
            .unwrap();
        assert!((sup[0].norm - 0.05).abs() < 1e-12);
        // theta_hat = 1.0 is centered, so both vertices attain the sup
        assert!(sup[0].maximizer == vec![1.05] || sup[0].maximizer == vec![0.95]);
    }

    #[test]
    fn sup_vertex_result_dominates_dense_lattice() {
        let s = delivery_subsystem();
        let coarse = s
            .sup_gamma_norm(&[0.0, 0.0], &[1.0, 1.0], SupSearch::default())
            .unwrap();
        let dense = s
            .sup_gamma_norm(
                &[0.0, 0.0],
                &[1.0, 1.0],
                SupSearch {
                    lattice_points: 9,
                    explicit_lattice: true,
                },
            )
            .unwrap();
        for (c, d) in coarse.iter().zip(&dense) {
            assert!(c.norm >= d.norm - 1e-12, "{} vs {}", c.norm, d.norm);
            // affine-in-theta: the maximizer must sit at a box vertex
            for (m, b) in c.maximizer.iter().zip(&s.theta_box.bounds) {
                assert!((m - b[0]).abs() < 1e-12 || (m - b[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn big_parameter_boxes_require_explicit_lattice() {
        let p = 25;
        let s = simple_subsystem(
            "big",
            vec!["x[0]"],
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[0.0, 1.0]; p]),
            vec![0.5; p],
        )
        .unwrap();
        assert!(matches!(
            s.sup_gamma_norm(&[0.0], &[0.0], SupSearch::default()),
            Err(SystemError::TooManyVertices { .. })
        ));
    }

    #[test]
    fn constructor_rejects_nominal_outside_box() {
        let r = simple_subsystem(
            "bad",
            vec!["x[0]"],
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[0.0, 1.0]]),
            vec![2.0],
        );
        assert!(matches!(r, Err(SystemError::NominalOutsideBox { .. })));
    }

    #[test]
    fn eval_reports_offending_coordinate() {
        let s = simple_subsystem(
            "div",
            vec!["x[0]", "u[0] / theta[0]"],
            AxisBox::new(vec![[-1.0, 1.0], [-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            AxisBox::new(vec![[-1.0, 1.0]]),
            vec![0.5],
        )
        .unwrap();
        let err = s.eval_dynamics(&[0.0, 0.0], &[1.0], &[0.0]).unwrap_err();
        match err {
            SystemError::Eval { coordinate, .. } => assert_eq!(coordinate, 1),
            other => panic!("unexpected error {other}"),
        }
    }
}
