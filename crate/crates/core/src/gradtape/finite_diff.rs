use super::{ParamSet, Result};

/// Default step for central differences in `f64`.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff_flat(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of a loss over a parameter set, in flattening
/// order. Verification oracle for [`super::Tape::backward`].
pub fn finite_diff_grad(
    loss_fn: impl Fn(&ParamSet) -> f64,
    params: &ParamSet,
    h: f64,
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let base = params.flatten();
    let mut scratch = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for j in 0..base.len() {
        scratch[j] = base[j] + h;
        probe.assign_flat(&scratch)?;
        let up = loss_fn(&probe);
        scratch[j] = base[j] - h;
        probe.assign_flat(&scratch)?;
        let down = loss_fn(&probe);
        scratch[j] = base[j];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
