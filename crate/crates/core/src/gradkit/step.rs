use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gas::dot;
use super::{
    conflict_mask, gas_weights, sample_damping, sgs_apply, weighted_combine, AgreementMode,
    ConflictMask, DampingDistribution, FlatGradient, GradientSet, Result, WeightVector,
    DEFAULT_EPSILON,
};

/// Per-update record of what the combiner saw and did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub per_grad_l2_norm: Vec<f64>,
    /// Symmetric (N+1)x(N+1) matrix; diagonal is 1 for nonzero gradients and
    /// 0 for zero ones, as are the off-diagonal entries involving them.
    pub pairwise_cosine: Vec<Vec<f64>>,
    pub weights: WeightVector,
    pub conflict_fraction: f64,
    pub gamma_sampled: f64,
    pub negative_weights: usize,
}

impl StepDiagnostics {
    pub fn new(
        grads: &GradientSet,
        weights: WeightVector,
        mask: &ConflictMask,
        gamma: f64,
    ) -> Self {
        let norms = l2_norms(grads);
        Self {
            pairwise_cosine: cosine_from_norms(grads, &norms),
            per_grad_l2_norm: norms,
            negative_weights: weights.negative_count(),
            weights,
            conflict_fraction: mask.conflict_fraction(),
            gamma_sampled: gamma,
        }
    }
}

pub fn l2_norms(grads: &GradientSet) -> Vec<f64> {
    grads
        .iter()
        .map(|g| dot(g.as_slice(), g.as_slice()).sqrt())
        .collect()
}

pub fn pairwise_cosine(grads: &GradientSet) -> Vec<Vec<f64>> {
    cosine_from_norms(grads, &l2_norms(grads))
}

fn cosine_from_norms(grads: &GradientSet, norms: &[f64]) -> Vec<Vec<f64>> {
    let n = grads.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        if norms[i] > 0.0 {
            m[i][i] = 1.0;
        }
        for j in (i + 1)..n {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                let c = dot(grads[i].as_slice(), grads[j].as_slice()) / (norms[i] * norms[j]);
                let c = c.clamp(-1.0, 1.0);
                m[i][j] = c;
                m[j][i] = c;
            }
        }
    }
    m
}

/// One combined update direction from a gradient set.
///
/// Weights and mask are both computed from the raw set; the damped set is
/// then combined with those weights.
pub fn cg2a_step<R: Rng + ?Sized>(
    grads: &GradientSet,
    rng: &mut R,
    mode: AgreementMode,
    dist: &DampingDistribution,
) -> Result<(FlatGradient, StepDiagnostics)> {
    let weights = gas_weights(grads, DEFAULT_EPSILON)?;
    let mask = conflict_mask(grads, mode);
    let gamma = sample_damping(rng, dist);
    let damped = sgs_apply(grads, &mask, gamma)?;
    let combined = weighted_combine(&damped, &weights)?;
    Ok((combined, StepDiagnostics::new(grads, weights, &mask, gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn set(v: Vec<Vec<f64>>) -> GradientSet {
        GradientSet::from_vecs(v).unwrap()
    }

    #[test]
    fn identical_gradients_pass_through() {
        let g = vec![0.5, -1.25, 2.0];
        for mode in [AgreementMode::StrictPaper, AgreementMode::SignSymmetric] {
            let s = set(vec![g.clone(); 3]);
            let (out, diag) = cg2a_step(
                &s,
                &mut rng_from_seed(1),
                mode,
                &DampingDistribution::default(),
            )
            .unwrap();
            if mode == AgreementMode::SignSymmetric {
                assert_eq!(diag.conflict_fraction, 0.0);
            }
            for (o, e) in out.as_slice().iter().zip(&g) {
                // Uniform thirds may round in the last place; damping only
                // touches the positive-only rule's negative column.
                let scale = if mode == AgreementMode::StrictPaper && *e < 0.0 {
                    diag.gamma_sampled
                } else {
                    1.0
                };
                assert!((o - scale * e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn opposing_pair_cancels() {
        let s = set(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let (out, diag) = cg2a_step(
            &s,
            &mut rng_from_seed(9),
            AgreementMode::SignSymmetric,
            &DampingDistribution::default(),
        )
        .unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);
        assert!(diag.weights.fallback_used);
        assert_eq!(diag.conflict_fraction, 1.0);
        assert_eq!(diag.pairwise_cosine[0][1], -1.0);
        assert_eq!(diag.pairwise_cosine[1][1], 1.0);
    }

    #[test]
    fn zero_gradient_cosines_are_zero() {
        let s = set(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        let c = pairwise_cosine(&s);
        assert_eq!(c, vec![vec![0.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn same_seed_same_step() {
        let s = set(vec![
            vec![0.3, -0.2, 0.9, 1.1],
            vec![-0.4, -0.1, 0.7, 0.2],
            vec![0.5, 0.6, -0.8, 0.05],
        ]);
        let d = DampingDistribution::default();
        let a = cg2a_step(&s, &mut rng_from_seed(4), AgreementMode::SignSymmetric, &d).unwrap();
        let b = cg2a_step(&s, &mut rng_from_seed(4), AgreementMode::SignSymmetric, &d).unwrap();
        assert_eq!(a, b);
    }
}
