use serde::{Deserialize, Serialize};

use super::{AgentError, Result};
use crate::gradkit::FlatGradient;
use crate::gradtape::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Sgd { lr: 1e-3 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            Self::Sgd { lr } => positive("lr", lr),
            Self::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                positive("lr", lr)?;
                positive("eps", eps)?;
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(0.0..1.0).contains(&b) {
                        return Err(format!("{name} must lie in [0, 1), got {b}"));
                    }
                }
                Ok(())
            }
        }
    }
}

fn positive(name: &str, v: f64) -> std::result::Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

/// Optimizer hyperparameters plus moment estimates (empty for SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        let n = match config {
            OptimizerConfig::Sgd { .. } => 0,
            OptimizerConfig::Adam { .. } => num_params,
        };
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Applies one descent step to `params` in flattening order.
pub fn optimizer_update(
    params: &mut ParamSet,
    grad: &FlatGradient,
    state: &mut OptimizerState,
) -> Result<()> {
    let n = params.num_params();
    if grad.len() != n {
        return Err(AgentError::Shape(format!(
            "gradient of length {} for {n} parameters",
            grad.len()
        )));
    }
    state.step += 1;
    let g = grad.as_slice();
    match state.config {
        OptimizerConfig::Sgd { lr } => {
            let mut offset = 0;
            for t in params.tensors_mut() {
                let d = t.data_mut();
                let n = d.len();
                for (p, gi) in d.iter_mut().zip(&g[offset..offset + n]) {
                    *p -= lr * gi;
                }
                offset += n;
            }
        }
        OptimizerConfig::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            if state.m.len() != n {
                return Err(AgentError::Shape(format!(
                    "optimizer state holds {} moments for {n} parameters",
                    state.m.len()
                )));
            }
            let t = state.step as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let mut offset = 0;
            for tensor in params.tensors_mut() {
                let d = tensor.data_mut();
                for (k, p) in d.iter_mut().enumerate() {
                    let i = offset + k;
                    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g[i];
                    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = state.m[i] / c1;
                    let vhat = state.v[i] / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                }
                offset += d.len();
            }
        }
    }
    Ok(())
}
