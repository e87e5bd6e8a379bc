use super::{FlatGradient, GradError, GradientSet, Result, WeightVector};

/// Default threshold below which the L1 normalizer is treated as zero.
pub const DEFAULT_EPSILON: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Agreement weights `w_i = s_i / sum_k |s_k|` with `s_i = sum_j g_i . g_j`.
///
/// `s_i` is evaluated as `g_i . (sum_j g_j)`. When the normalizer falls below
/// `epsilon` the weights fall back to the uniform `1/(N+1)` and the fallback
/// is flagged. Negative weights are returned as is.
pub fn gas_weights(grads: &GradientSet, epsilon: f64) -> Result<WeightVector> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(GradError::InvalidEpsilon(epsilon));
    }
    let mut total = vec![0.0; grads.dim()];
    for g in grads.iter() {
        for (t, v) in total.iter_mut().zip(g.as_slice()) {
            *t += v;
        }
    }
    let scores: Vec<f64> = grads.iter().map(|g| dot(g.as_slice(), &total)).collect();
    let norm: f64 = scores.iter().map(|s| s.abs()).sum();
    if !norm.is_finite() {
        return Err(GradError::Overflow);
    }
    if norm < epsilon {
        return Ok(WeightVector::uniform(grads.len(), true));
    }
    Ok(WeightVector {
        w: scores.iter().map(|s| s / norm).collect(),
        fallback_used: false,
    })
}

/// `sum_i w_i * g_i`, accumulated in member order.
pub fn weighted_combine(grads: &GradientSet, weights: &WeightVector) -> Result<FlatGradient> {
    if weights.len() != grads.len() {
        return Err(GradError::LengthMismatch {
            index: 0,
            expected: grads.len(),
            found: weights.len(),
        });
    }
    let mut members = grads.iter().zip(&weights.w);
    let (first, w0) = members.next().ok_or(GradError::Empty)?;
    let mut out: Vec<f64> = first.as_slice().iter().map(|v| w0 * v).collect();
    for (g, w) in members {
        for (o, v) in out.iter_mut().zip(g.as_slice()) {
            *o += w * v;
        }
    }
    FlatGradient::new(out).map_err(|_| GradError::Overflow)
}
