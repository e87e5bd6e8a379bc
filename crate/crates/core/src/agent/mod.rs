//! Off-policy Q-learning from pixels with an augmentation combination and
//! pluggable gradient aggregation.

mod checkpoint;
mod eval;
mod learner;
mod optimizer;
mod replay;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augbox::{AugError, AugmentationSpec, Combination, OverlayMode};
use crate::diagnostics::DiagnosticsError;
use crate::gradkit::{AgreementMode, DampingDistribution, GradError};
use crate::gradtape::{CheckpointError, ConvLayerSpec, QNetworkSpec, TapeError};
use crate::pixelworld::{EnvConfig, EnvError, EnvVariant, NUM_ACTIONS};

pub use checkpoint::{read_checkpoint, write_checkpoint, OPTIMIZER_FORMAT_VERSION};
pub use eval::{evaluate, EvalReport};
pub use learner::{
    aggregate, critic_gradient_set, sample_softmax, select_action, td_targets, td_targets_from_q,
    Batch,
};
pub use optimizer::{optimizer_update, OptimizerConfig, OptimizerState};
pub use replay::{ReplayBuffer, Transition};
pub use train::{sync_target, train, TrainOutcome, Trainer};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Aug(#[from] AugError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl AgentError {
    /// Failures caused by non-finite or overflowing arithmetic.
    pub fn is_numeric(&self) -> bool {
        match self {
            Self::Tape(TapeError::NonFinite) => true,
            Self::Grad(g) => g.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, AgentError>;

/// How the per-augmentation gradients become one update direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Agreement weights and damped conflicting components.
    #[default]
    Cg2a,
    /// Uniform mean of the raw gradients.
    NaiveAverage,
    /// Agreement weights on the raw gradients.
    GasOnly,
    /// Damped conflicting components, uniform mean.
    SgsOnly,
    /// Identity plus one augmentation, uniform mean.
    SingleAug,
    /// Identity only.
    NoAug,
}

impl Aggregation {
    pub const ALL: [Aggregation; 6] = [
        Aggregation::Cg2a,
        Aggregation::NaiveAverage,
        Aggregation::GasOnly,
        Aggregation::SgsOnly,
        Aggregation::SingleAug,
        Aggregation::NoAug,
    ];
}

/// Softmax exploration temperature, annealed linearly from `start` to `end`
/// over the first `anneal_fraction` of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemperatureSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_fraction: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_fraction: 0.5,
        }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64, total_steps: u64) -> f64 {
        let horizon = self.anneal_fraction * total_steps as f64;
        if horizon <= 0.0 || step as f64 >= horizon {
            return self.end;
        }
        let frac = step as f64 / horizon;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub conv: Vec<ConvLayerSpec>,
    pub dense: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let s = QNetworkSpec::standard([3, 48, 48], NUM_ACTIONS);
        Self {
            conv: s.conv,
            dense: s.dense,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub seed: u64,
    pub size: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: crate::augbox::DistractorBank::DEFAULT_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub discount: f64,
    pub optimizer: OptimizerConfig,
    pub target_sync_period: u64,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub temperature: TemperatureSchedule,
    pub aggregation: Aggregation,
    pub combination: Combination,
    /// The augmentation paired with Identity under `SingleAug`.
    pub single_aug: AugmentationSpec,
    pub agreement: AgreementMode,
    pub damping: DampingDistribution,
    pub overlay_mode: OverlayMode,
    pub bank: BankConfig,
    pub env: EnvConfig,
    pub train_variant: EnvVariant,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 30_000,
            batch_size: 64,
            discount: 0.99,
            optimizer: OptimizerConfig::default(),
            target_sync_period: 500,
            buffer_capacity: 20_000,
            warmup_steps: 500,
            temperature: TemperatureSchedule::default(),
            aggregation: Aggregation::default(),
            combination: Combination::default_set(),
            single_aug: AugmentationSpec::Overlay { mu: 0.5 },
            agreement: AgreementMode::default(),
            damping: DampingDistribution::default(),
            overlay_mode: OverlayMode::default(),
            bank: BankConfig::default(),
            env: EnvConfig::default(),
            train_variant: EnvVariant::Train,
            network: NetworkConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(AgentError::Config(format!("{field}: {msg}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.discount.is_finite() && (0.0..1.0).contains(&self.discount)) {
            return bad(
                "discount",
                format!("must lie in [0, 1), got {}", self.discount),
            );
        }
        if let Err(e) = self.optimizer.validate() {
            return bad("optimizer", e);
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period", "must be positive".into());
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity", "must be positive".into());
        }
        let t = &self.temperature;
        if !(t.start.is_finite() && t.start >= 0.0 && t.end.is_finite() && t.end >= 0.0) {
            return bad("temperature", "start and end must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&t.anneal_fraction) {
            return bad("temperature.anneal_fraction", "must lie in [0, 1]".into());
        }
        if self.single_aug.is_identity() {
            return bad("single_aug", "must not be identity".into());
        }
        if let Err(e) = self.single_aug.validate() {
            return bad("single_aug", e.to_string());
        }
        if let Err(e) = DampingDistribution::new(self.damping.alpha(), self.damping.beta()) {
            return bad("damping", e.to_string());
        }
        if self.bank.size == 0 {
            return bad("bank.size", "must be positive".into());
        }
        if let Err(e) = self.env.validate() {
            return bad("env", e.to_string());
        }
        if let Err(e) = self.network_spec().validate() {
            return bad("network", e.to_string());
        }
        Ok(())
    }

    pub fn network_spec(&self) -> QNetworkSpec {
        QNetworkSpec {
            input: self.env.observation_shape(),
            conv: self.network.conv.clone(),
            dense: self.network.dense.clone(),
            actions: NUM_ACTIONS,
        }
    }

    /// The combination actually trained with under this aggregation mode.
    pub fn effective_combination(&self) -> Combination {
        match self.aggregation {
            Aggregation::NoAug => Combination::identity_only(),
            Aggregation::SingleAug => crate::augbox::make_combination(&[self.single_aug])
                .expect("validated single augmentation"),
            _ => self.combination.clone(),
        }
    }
}
