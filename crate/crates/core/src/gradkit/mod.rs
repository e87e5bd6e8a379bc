//! Gradient combination for augmentation ensembles.
//!
//! Every augmented view of a minibatch produces its own critic gradient. This
//! module turns that set of flat gradients into a single update direction in
//! two independent passes over the raw set:
//!
//! * [`gas_weights`] assigns each gradient a signed, L1-normalized weight
//!   proportional to its dot product with the sum of all gradients, so that
//!   members aligned with the consensus dominate the update.
//! * [`conflict_mask`] marks the components on which every gradient agrees in
//!   sign; [`sgs_apply`] keeps those untouched and shrinks all other
//!   components by a damping factor drawn once per step from
//!   [`DampingDistribution`].
//!
//! [`cg2a_step`] composes both: the damped gradients are combined with the
//! weights computed from the undamped ones.
//!
//! All arithmetic is done in `f64` regardless of how parameters are stored.

mod gas;
mod sgs;
mod step;

pub use gas::{gas_weights, weighted_combine, DEFAULT_EPSILON};
pub use sgs::{conflict_mask, sample_damping, sgs_apply};
pub use step::{cg2a_step, l2_norms, pairwise_cosine, StepDiagnostics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradError {
    #[error("gradient set is empty")]
    Empty,
    #[error("gradient {index} has length {found}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at component {component} of gradient {gradient}")]
    NonFinite { gradient: usize, component: usize },
    #[error("agreement statistics overflowed to a non-finite value")]
    Overflow,
    #[error("damping interval [{alpha}, {beta}] must satisfy 0 <= alpha <= beta <= 1")]
    InvalidDamping { alpha: f64, beta: f64 },
    #[error("damping factor {0} is outside [0, 1]")]
    InvalidGamma(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
}

impl GradError {
    /// True for errors caused by the numeric content of the input rather than
    /// its structure.
    pub fn is_numeric(&self) -> bool {
        matches!(self, GradError::NonFinite { .. } | GradError::Overflow)
    }
}

pub type Result<T> = std::result::Result<T, GradError>;

/// A flattened parameter-space gradient with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlatGradient(Vec<f64>);

impl FlatGradient {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(component) = values.iter().position(|v| !v.is_finite()) {
            return Err(GradError::NonFinite {
                gradient: 0,
                component,
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

impl AsRef<[f64]> for FlatGradient {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The gradients of the unaugmented loss (index 0) and of each augmented loss,
/// all of the same length.
///
/// A single-member set is accepted: it is what an augmentation-free
/// combination produces, and every operation degenerates to the identity on it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    grads: Vec<FlatGradient>,
    dim: usize,
}

impl GradientSet {
    pub fn new(grads: Vec<FlatGradient>) -> Result<Self> {
        let dim = grads.first().ok_or(GradError::Empty)?.len();
        for (index, g) in grads.iter().enumerate() {
            if g.len() != dim {
                return Err(GradError::LengthMismatch {
                    index,
                    expected: dim,
                    found: g.len(),
                });
            }
        }
        Ok(Self { grads, dim })
    }

    pub fn from_vecs(vecs: Vec<Vec<f64>>) -> Result<Self> {
        let grads = vecs
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                FlatGradient::new(v).map_err(|e| match e {
                    GradError::NonFinite { component, .. } => GradError::NonFinite {
                        gradient: i,
                        component,
                    },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grads)
    }

    /// Number of gradients (N+1).
    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Common length M of every member.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, index: usize) -> Option<&FlatGradient> {
        self.grads.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FlatGradient> {
        self.grads.iter()
    }

    pub fn as_slice(&self) -> &[FlatGradient] {
        &self.grads
    }

    pub fn into_vec(self) -> Vec<FlatGradient> {
        self.grads
    }

    pub fn negated(&self) -> Self {
        Self {
            grads: self.grads.iter().map(FlatGradient::negated).collect(),
            dim: self.dim,
        }
    }
}

impl std::ops::Index<usize> for GradientSet {
    type Output = FlatGradient;

    fn index(&self, index: usize) -> &FlatGradient {
        &self.grads[index]
    }
}

/// Signed per-gradient weights. When `fallback_used` is set every weight is
/// exactly `1/(N+1)`; otherwise the absolute values sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub fallback_used: bool,
}

impl WeightVector {
    pub fn uniform(n: usize, fallback_used: bool) -> Self {
        Self {
            w: vec![1.0 / n as f64; n],
            fallback_used,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn negative_count(&self) -> usize {
        self.w.iter().filter(|w| **w < 0.0).count()
    }
}

/// Per-component agreement: `true` where every gradient agrees in sign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictMask {
    pub bits: Vec<bool>,
}

impl ConflictMask {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn conflict_count(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// Share of components in conflict; 0 for an empty mask.
    pub fn conflict_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.conflict_count() as f64 / self.bits.len() as f64
        }
    }
}

/// Uniform distribution of the damping factor applied to conflicting
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingDistribution {
    alpha: f64,
    beta: f64,
}

impl DampingDistribution {
    pub const DEFAULT_ALPHA: f64 = 0.22;
    pub const DEFAULT_BETA: f64 = 0.28;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let ok =
            alpha.is_finite() && beta.is_finite() && 0.0 <= alpha && alpha <= beta && beta <= 1.0;
        if !ok {
            return Err(GradError::InvalidDamping { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    /// A degenerate distribution that always yields `gamma`.
    pub fn constant(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for DampingDistribution {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            beta: Self::DEFAULT_BETA,
        }
    }
}

/// How sign agreement across a column of gradient components is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMode {
    /// Only all-positive columns agree (the sign sum must equal N+1).
    StrictPaper,
    /// All-positive and all-negative columns agree.
    #[default]
    SignSymmetric,
}

impl std::str::FromStr for AgreementMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "strict" | "strict_paper" => Ok(Self::StrictPaper),
            "symmetric" | "sign_symmetric" => Ok(Self::SignSymmetric),
            other => Err(format!(
                "unknown agreement mode `{other}` (expected strict or symmetric)"
            )),
        }
    }
}
