use serde::{Deserialize, Serialize};

use super::{sample_softmax, AgentError, Result};
use crate::gradtape::{q_values, ParamSet, QNetworkSpec, Tensor};
use crate::pixelworld::{Action, ColorReach, EnvConfig, EnvVariant, PackedObservation};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: EnvVariant,
    pub seed: u64,
    pub episodes: usize,
    pub mean_return: f64,
    /// Population standard deviation.
    pub std_return: f64,
    pub returns: Vec<f64>,
}

/// Greedy rollouts without augmentation. Episode `i` is reset from
/// `derive_seed(seed, i)`; all episodes advance in lockstep so that each
/// policy query is one batched forward pass.
pub fn evaluate(
    spec: &QNetworkSpec,
    params: &ParamSet,
    env_config: &EnvConfig,
    variant: EnvVariant,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(AgentError::Config("episodes must be at least 1".into()));
    }
    let mut envs = Vec::with_capacity(episodes);
    let mut obs: Vec<Option<PackedObservation>> = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut env = ColorReach::new(env_config.clone())?;
        let (_, o) = env.reset(derive_seed(seed, i as u64), variant);
        envs.push(env);
        obs.push(Some(o));
    }
    let mut returns = vec![0.0; episodes];
    // Greedy selection never draws; the generator only satisfies the signature.
    let mut unused = rng_from_seed(0);
    loop {
        let active: Vec<usize> = (0..episodes).filter(|&i| obs[i].is_some()).collect();
        if active.is_empty() {
            break;
        }
        let first = obs[active[0]].as_ref().expect("active");
        let [c, h, w] = first.shape();
        let n = first.len();
        let mut data = vec![0.0; active.len() * n];
        for (k, &i) in active.iter().enumerate() {
            obs[i]
                .as_ref()
                .expect("active")
                .write_unit(&mut data[k * n..(k + 1) * n]);
        }
        let q = q_values(
            spec,
            params,
            &Tensor::new(vec![active.len(), c, h, w], data)?,
        )?;
        for (k, &i) in active.iter().enumerate() {
            let a = sample_softmax(q.row(k), 0.0, &mut unused);
            let (_, r) = envs[i].step(Action::from_index(a).expect("action index"))?;
            returns[i] += r.reward;
            obs[i] = (!r.done).then_some(r.observation);
        }
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(EvalReport {
        variant,
        seed,
        episodes,
        mean_return: mean,
        std_return: var.sqrt(),
        returns,
    })
}
