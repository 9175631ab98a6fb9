//! Sub-simulation-relation certificates: an output deviation bound `epsilon`
//! and a per-step coupling deficit `delta`, either constant or tabulated
//! over abstract (state cell, external input, internal input) triples.
//!
//! Two constructions feed the pipeline: the model-uncertainty certificate
//! (worst-case coupling deficit over the parameter box, identity relation,
//! `epsilon = 0`) built here, and the discretization certificate built by
//! the grid module. Transitive composition chains them.

use crate::gmm::coupling::k1_deficit;
use crate::gmm::coupling_delta;
use crate::par;
use crate::system::{Subsystem, SupSearch, SystemError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("certificate needs at least one evaluation point")]
    EmptyEvalPoints,
    #[error("evaluation points ({points}) do not fill the table shape ({shape})")]
    ShapeMismatch { points: usize, shape: usize },
    #[error("delta tables have incompatible shapes: {a:?} vs {b:?}")]
    IncompatibleTables { a: TableShape, b: TableShape },
    #[error("certificate `{0}` already appears in the composition chain")]
    CyclicProvenance(String),
    #[error("epsilon must be nonnegative, got {0}")]
    InvalidEpsilon(f64),
    #[error("delta entry {value} at index {index} outside [0, 1]")]
    InvalidDelta { index: usize, value: f64 },
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Which relation the certificate witnesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationKind {
    /// `x_hat = x` (model-uncertainty coupling).
    IdentityRelation,
    /// `x` lies in the cell represented by `x_hat`.
    GridRelation,
}

/// Dense table layout over (state cell, external input index, internal
/// input index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableShape {
    pub states: usize,
    pub ext_inputs: usize,
    pub int_inputs: usize,
}

impl TableShape {
    pub fn len(&self) -> usize {
        self.states * self.ext_inputs * self.int_inputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, state: usize, ext: usize, int: usize) -> usize {
        debug_assert!(state < self.states && ext < self.ext_inputs && int < self.int_inputs);
        (state * self.ext_inputs + ext) * self.int_inputs + int
    }
}

/// Coupling deficit profile: one number, or one number per abstract
/// state-action triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeltaProfile {
    Constant(f64),
    Table { shape: TableShape, values: Vec<f64> },
}

impl DeltaProfile {
    pub fn value_at(&self, state: usize, ext: usize, int: usize) -> f64 {
        match self {
            DeltaProfile::Constant(v) => *v,
            DeltaProfile::Table { shape, values } => values[shape.index(state, ext, int)],
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            DeltaProfile::Constant(v) => *v,
            DeltaProfile::Table { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    fn validate(&self) -> Result<(), CertError> {
        let check = |index: usize, value: f64| {
            if !(0.0..=1.0).contains(&value) {
                Err(CertError::InvalidDelta { index, value })
            } else {
                Ok(())
            }
        };
        match self {
            DeltaProfile::Constant(v) => check(0, *v),
            DeltaProfile::Table { shape, values } => {
                if values.len() != shape.len() {
                    return Err(CertError::ShapeMismatch {
                        points: values.len(),
                        shape: shape.len(),
                    });
                }
                for (i, v) in values.iter().enumerate() {
                    check(i, *v)?;
                }
                Ok(())
            }
        }
    }
}

/// An (epsilon, delta) certificate with an audit trail of what was composed
/// into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsrCertificate {
    pub id: String,
    pub kind: RelationKind,
    pub epsilon: f64,
    pub delta: DeltaProfile,
    pub provenance: Vec<String>,
}

impl SsrCertificate {
    pub fn new(
        id: String,
        kind: RelationKind,
        epsilon: f64,
        delta: DeltaProfile,
        provenance: Vec<String>,
    ) -> Result<Self, CertError> {
        if !(epsilon >= 0.0) {
            return Err(CertError::InvalidEpsilon(epsilon));
        }
        delta.validate()?;
        Ok(Self {
            id,
            kind,
            epsilon,
            delta,
            provenance,
        })
    }

    pub fn constant(
        id: &str,
        kind: RelationKind,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self, CertError> {
        Self::new(
            id.to_string(),
            kind,
            epsilon,
            DeltaProfile::Constant(delta),
            vec![],
        )
    }

    fn chain(&self) -> Vec<String> {
        let mut c = self.provenance.clone();
        c.push(self.id.clone());
        c
    }
}

/// Worst-case coupling deficit at one concrete state-input pair, taken over
/// the parameter candidates.
///
/// With scenario-fixed weights the deficit decomposes per component and is
/// monotone in each whitened offset norm, so the per-component suprema give
/// the (conservative, vertex-exact for affine parametrizations) bound
/// `sum_k pi_hat_k (1 - 2 Phi(-b_k/2))`. With parameter-bound weights the
/// full bracket is maximized over the candidate set instead.
pub fn model_uncertainty_delta(
    s: &Subsystem,
    x: &[f64],
    u: &[f64],
    candidates: &[Vec<f64>],
) -> Result<f64, CertError> {
    if s.noise.weights_theta_bound() {
        let mut worst: f64 = 0.0;
        for theta in candidates {
            let pair = s.coupling_pair_at(x, u, theta)?;
            worst = worst.max(coupling_delta(&pair));
        }
        Ok(worst)
    } else {
        let sups = s.sup_gamma_norm_over(x, u, candidates)?;
        let weights = s.nominal_mixture().weights();
        let delta: f64 = sups
            .iter()
            .zip(weights)
            .map(|(sup, pi)| pi * k1_deficit(sup.norm))
            .sum();
        Ok(delta.clamp(0.0, 1.0))
    }
}

/// Model-uncertainty certificate over a full table of evaluation points,
/// laid out in `shape` order (cell-major, then external input, then
/// internal input). `epsilon = 0`, identity relation.
pub fn model_uncertainty_certificate(
    s: &Subsystem,
    eval_points: &[(Vec<f64>, Vec<f64>)],
    shape: TableShape,
    search: SupSearch,
) -> Result<SsrCertificate, CertError> {
    if eval_points.is_empty() {
        return Err(CertError::EmptyEvalPoints);
    }
    if eval_points.len() != shape.len() {
        return Err(CertError::ShapeMismatch {
            points: eval_points.len(),
            shape: shape.len(),
        });
    }
    let candidates = s.theta_candidates(search)?;
    let results = par::map_indexed(eval_points.len(), |i| {
        let (x, u) = &eval_points[i];
        model_uncertainty_delta(s, x, u, &candidates)
    });
    let mut values = Vec::with_capacity(results.len());
    for r in results {
        values.push(r?);
    }
    SsrCertificate::new(
        format!("model-uncertainty:{}", s.id),
        RelationKind::IdentityRelation,
        0.0,
        DeltaProfile::Table { shape, values },
        vec![],
    )
}

/// Transitive composition: epsilons add, deficits add pointwise (clamped to
/// 1), tables broadcast against constants. The provenance chains must be
/// disjoint.
pub fn compose_transitive(
    a: &SsrCertificate,
    b: &SsrCertificate,
    composed_id: &str,
) -> Result<SsrCertificate, CertError> {
    let chain_a = a.chain();
    let chain_b = b.chain();
    for id in &chain_b {
        if chain_a.contains(id) {
            return Err(CertError::CyclicProvenance(id.clone()));
        }
    }
    let delta = match (&a.delta, &b.delta) {
        (DeltaProfile::Constant(x), DeltaProfile::Constant(y)) => {
            DeltaProfile::Constant((x + y).clamp(0.0, 1.0))
        }
        (DeltaProfile::Table { shape, values }, DeltaProfile::Constant(c))
        | (DeltaProfile::Constant(c), DeltaProfile::Table { shape, values }) => {
            DeltaProfile::Table {
                shape: *shape,
                values: values.iter().map(|v| (v + c).clamp(0.0, 1.0)).collect(),
            }
        }
        (
            DeltaProfile::Table {
                shape: sa,
                values: va,
            },
            DeltaProfile::Table {
                shape: sb,
                values: vb,
            },
        ) => {
            if sa != sb {
                return Err(CertError::IncompatibleTables { a: *sa, b: *sb });
            }
            DeltaProfile::Table {
                shape: *sa,
                values: va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| (x + y).clamp(0.0, 1.0))
                    .collect(),
            }
        }
    };
    let mut provenance = chain_a;
    provenance.extend(chain_b);
    SsrCertificate::new(
        composed_id.to_string(),
        // the composed relation is the weaker (grid) one when present
        if a.kind == RelationKind::GridRelation || b.kind == RelationKind::GridRelation {
            RelationKind::GridRelation
        } else {
            RelationKind::IdentityRelation
        },
        a.epsilon + b.epsilon,
        delta,
        provenance,
    )
}
