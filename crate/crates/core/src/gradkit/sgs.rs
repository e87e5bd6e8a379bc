use rand::Rng;

use super::{
    AgreementMode, ConflictMask, DampingDistribution, FlatGradient, GradError, GradientSet, Result,
};

/// Marks each component on which all gradients agree in sign.
///
/// Zero components never agree (`sign(0) = 0`). A single gradient has nothing
/// to conflict with, so its mask is all `true`.
pub fn conflict_mask(grads: &GradientSet, mode: AgreementMode) -> ConflictMask {
    let members = grads.as_slice();
    if members.len() == 1 {
        return ConflictMask {
            bits: vec![true; grads.dim()],
        };
    }
    let bits = (0..grads.dim())
        .map(|j| {
            let mut all_pos = true;
            let mut all_neg = true;
            for g in members {
                let v = g.as_slice()[j];
                all_pos &= v > 0.0;
                all_neg &= v < 0.0;
            }
            match mode {
                AgreementMode::StrictPaper => all_pos,
                AgreementMode::SignSymmetric => all_pos || all_neg,
            }
        })
        .collect();
    ConflictMask { bits }
}

/// Draws one damping factor uniformly from `[alpha, beta]`.
pub fn sample_damping<R: Rng + ?Sized>(rng: &mut R, dist: &DampingDistribution) -> f64 {
    let (a, b) = (dist.alpha(), dist.beta());
    if a == b {
        return a;
    }
    let u: f64 = rng.random();
    (a + (b - a) * u).clamp(a, b)
}

/// Keeps agreed components and scales every conflicting component of every
/// gradient by the same `gamma`.
pub fn sgs_apply(grads: &GradientSet, mask: &ConflictMask, gamma: f64) -> Result<GradientSet> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(GradError::InvalidGamma(gamma));
    }
    if mask.len() != grads.dim() {
        return Err(GradError::LengthMismatch {
            index: 0,
            expected: grads.dim(),
            found: mask.len(),
        });
    }
    let out = grads
        .iter()
        .map(|g| {
            let values = g
                .as_slice()
                .iter()
                .zip(&mask.bits)
                .map(|(v, keep)| if *keep { *v } else { gamma * v })
                .collect();
            FlatGradient::new(values)
        })
        .collect::<Result<Vec<_>>>()?;
    GradientSet::new(out)
}
