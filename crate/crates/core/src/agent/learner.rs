use rand::Rng;

use super::{AgentError, Aggregation, Result, Transition};
use crate::augbox::{augment_batch, Combination, DistractorBank, OverlayMode};
use crate::gradkit::{
    cg2a_step, conflict_mask, gas_weights, sample_damping, sgs_apply, weighted_combine,
    AgreementMode, DampingDistribution, FlatGradient, GradientSet, StepDiagnostics, WeightVector,
    DEFAULT_EPSILON,
};
use crate::gradtape::{critic_loss, q_forward, q_values, ParamSet, QNetworkSpec, Tensor};
use crate::pixelworld::PackedObservation;

/// A minibatch in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, K*3, H, W]`
    pub obs: Tensor,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `[B, K*3, H, W]`, never augmented.
    pub next_obs: Tensor,
    pub dones: Vec<bool>,
}

fn stack_packed<'a>(items: impl ExactSizeIterator<Item = &'a PackedObservation>) -> Result<Tensor> {
    let b = items.len();
    let mut shape = None;
    let mut data = Vec::new();
    for o in items {
        let s = o.shape();
        if *shape.get_or_insert(s) != s {
            return Err(AgentError::Shape("observations of differing shapes".into()));
        }
        let start = data.len();
        data.resize(start + o.len(), 0.0);
        o.write_unit(&mut data[start..]);
    }
    let s = shape.ok_or_else(|| AgentError::Shape("empty batch".into()))?;
    Ok(Tensor::new(vec![b, s[0], s[1], s[2]], data)?)
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        Ok(Self {
            obs: stack_packed(items.iter().map(|t| &t.obs))?,
            actions: items.iter().map(|t| t.action).collect(),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_obs: stack_packed(items.iter().map(|t| &t.next_obs))?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// `r + discount * (1 - done) * max_a q_next[a]` per row of `q_next`.
pub fn td_targets_from_q(
    rewards: &[f64],
    dones: &[bool],
    q_next: &Tensor,
    discount: f64,
) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .enumerate()
        .map(|(b, (&r, &done))| {
            if done {
                r
            } else {
                let best = q_next
                    .row(b)
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                r + discount * best
            }
        })
        .collect()
}

/// Targets from the target network on raw successor observations.
pub fn td_targets(
    batch: &Batch,
    spec: &QNetworkSpec,
    target_params: &ParamSet,
    discount: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(AgentError::Shape("empty batch".into()));
    }
    let q_next = q_values(spec, target_params, &batch.next_obs)?;
    Ok(td_targets_from_q(
        &batch.rewards,
        &batch.dones,
        &q_next,
        discount,
    ))
}

/// One unweighted critic gradient per member of `combination`, all against
/// the same targets. Also returns the per-member losses.
#[allow(clippy::too_many_arguments)]
pub fn critic_gradient_set<R: Rng + ?Sized>(
    batch: &Batch,
    targets: &[f64],
    spec: &QNetworkSpec,
    params: &ParamSet,
    combination: &Combination,
    bank: &DistractorBank,
    overlay_mode: OverlayMode,
    rng: &mut R,
) -> Result<(GradientSet, Vec<f64>)> {
    let mut grads = Vec::with_capacity(combination.len());
    let mut losses = Vec::with_capacity(combination.len());
    for spec_i in combination.members() {
        let obs = augment_batch(&batch.obs, spec_i, bank, rng, overlay_mode)?;
        let (q, mut tape) = q_forward(spec, params, &obs)?;
        let loss = critic_loss(&mut tape, q, &batch.actions, targets)?;
        losses.push(tape.value(loss).data()[0]);
        grads.push(tape.backward(loss)?);
    }
    Ok((GradientSet::new(grads)?, losses))
}

/// Turns a gradient set into one update direction per the aggregation mode.
/// Modes without damping record `gamma_sampled = 1`.
pub fn aggregate<R: Rng + ?Sized>(
    grads: &GradientSet,
    mode: Aggregation,
    agreement: AgreementMode,
    damping: &DampingDistribution,
    rng: &mut R,
) -> Result<(FlatGradient, StepDiagnostics)> {
    let n = grads.len();
    let out = match mode {
        Aggregation::Cg2a => cg2a_step(grads, rng, agreement, damping)?,
        Aggregation::NaiveAverage | Aggregation::SingleAug | Aggregation::NoAug => {
            let w = WeightVector::uniform(n, false);
            let mask = conflict_mask(grads, agreement);
            let g = weighted_combine(grads, &w)?;
            (g, StepDiagnostics::new(grads, w, &mask, 1.0))
        }
        Aggregation::GasOnly => {
            let w = gas_weights(grads, DEFAULT_EPSILON)?;
            let mask = conflict_mask(grads, agreement);
            let g = weighted_combine(grads, &w)?;
            (g, StepDiagnostics::new(grads, w, &mask, 1.0))
        }
        Aggregation::SgsOnly => {
            let w = WeightVector::uniform(n, false);
            let mask = conflict_mask(grads, agreement);
            let gamma = sample_damping(rng, damping);
            let damped = sgs_apply(grads, &mask, gamma)?;
            let g = weighted_combine(&damped, &w)?;
            (g, StepDiagnostics::new(grads, w, &mask, gamma))
        }
    };
    Ok(out)
}

/// Samples from `softmax(q / temperature)`; temperature 0 is argmax with
/// ties going to the lowest index and draws nothing from `rng`.
pub fn sample_softmax<R: Rng + ?Sized>(q: &[f64], temperature: f64, rng: &mut R) -> usize {
    let (best, qmax) = q
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });
    if temperature <= 0.0 {
        return best;
    }
    let weights: Vec<f64> = q.iter().map(|v| ((v - qmax) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    q.len() - 1
}

pub fn select_action<R: Rng + ?Sized>(
    spec: &QNetworkSpec,
    params: &ParamSet,
    obs: &PackedObservation,
    temperature: f64,
    rng: &mut R,
) -> Result<usize> {
    let x = stack_packed(std::iter::once(obs))?;
    let q = q_values(spec, params, &x)?;
    Ok(sample_softmax(q.data(), temperature, rng))
}
