use rand::Rng;

use super::{
    aggregate, critic_gradient_set, optimizer_update, select_action, td_targets, Batch,
    OptimizerState, ReplayBuffer, Result, TrainConfig, Transition,
};
use crate::augbox::{Combination, DistractorBank};
use crate::diagnostics::{MetricsLog, StepRecord};
use crate::gradtape::{init_params, ParamSet, QNetworkSpec};
use crate::pixelworld::{Action, ColorReach, PackedObservation, NUM_ACTIONS};
use crate::seed::{stream_rng, streams, Rng as SeedRng};

/// Hard copy of the online parameters into the target network.
pub fn sync_target(params: &ParamSet, target: &mut ParamSet) {
    target.clone_from(params);
}

struct Streams {
    exploration: SeedRng,
    replay: SeedRng,
    augmentation: SeedRng,
    damping: SeedRng,
    episodes: SeedRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            exploration: stream_rng(seed, streams::EXPLORATION),
            replay: stream_rng(seed, streams::REPLAY),
            augmentation: stream_rng(seed, streams::AUGMENTATION),
            damping: stream_rng(seed, streams::DAMPING),
            episodes: stream_rng(seed, streams::EPISODES),
        }
    }
}

/// Step-at-a-time training loop.
pub struct Trainer {
    config: TrainConfig,
    spec: QNetworkSpec,
    combination: Combination,
    bank: DistractorBank,
    env: ColorReach,
    obs: PackedObservation,
    episode_return: f64,
    params: ParamSet,
    target: ParamSet,
    optimizer: OptimizerState,
    buffer: ReplayBuffer<Transition>,
    rng: Streams,
    step: u64,
    log: MetricsLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub spec: QNetworkSpec,
    pub params: ParamSet,
    pub target_params: ParamSet,
    pub optimizer: OptimizerState,
    pub log: MetricsLog,
}

impl Trainer {
    /// Validates the config and sets up networks, environment and buffers.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.network_spec();
        let params = init_params(&spec, crate::seed::derive_seed(config.seed, streams::INIT))?;
        let res = config.env.resolution();
        let bank = DistractorBank::generate(config.bank.seed, config.bank.size, res, res);
        let mut rng = Streams::new(config.seed);
        let mut env = ColorReach::new(config.env.clone())?;
        let (_, obs) = env.reset(rng.episodes.random(), config.train_variant);
        Ok(Self {
            combination: config.effective_combination(),
            optimizer: OptimizerState::new(config.optimizer, params.num_params()),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            target: params.clone(),
            params,
            spec,
            bank,
            env,
            obs,
            episode_return: 0.0,
            rng,
            step: 0,
            log: MetricsLog::new(),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn spec(&self) -> &QNetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn combination(&self) -> &Combination {
        &self.combination
    }

    /// Environment steps taken so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps
    }

    /// Act, store, and (after warmup) perform one update.
    pub fn step(&mut self) -> Result<()> {
        let t = self.step;
        let cfg = &self.config;
        let action = if t < cfg.warmup_steps {
            self.rng.exploration.random_range(0..NUM_ACTIONS)
        } else {
            let temp = cfg.temperature.at(t, cfg.total_steps);
            select_action(
                &self.spec,
                &self.params,
                &self.obs,
                temp,
                &mut self.rng.exploration,
            )?
        };
        let (_, result) = self
            .env
            .step(Action::from_index(action).expect("action index in range"))?;
        self.episode_return += result.reward;
        let next_obs = result.observation.clone();
        self.buffer.push(Transition {
            obs: std::mem::replace(&mut self.obs, next_obs),
            action,
            reward: result.reward,
            next_obs: result.observation,
            done: result.goal_reached,
        });
        let mut record = StepRecord::new(t);
        if result.done {
            record.episode_return = Some(self.episode_return);
            self.episode_return = 0.0;
            let (_, obs) = self
                .env
                .reset(self.rng.episodes.random(), self.config.train_variant);
            self.obs = obs;
        }

        if t >= self.config.warmup_steps && self.buffer.len() >= self.config.batch_size {
            let (losses, diag) = self.update()?;
            record.losses = Some(losses);
            record.update = Some(diag);
        }
        if (t + 1).is_multiple_of(self.config.target_sync_period) {
            sync_target(&self.params, &mut self.target);
        }
        self.log.push(record)?;
        self.step += 1;
        Ok(())
    }

    fn update(&mut self) -> Result<(Vec<f64>, crate::gradkit::StepDiagnostics)> {
        let cfg = &self.config;
        let sample = self.buffer.sample(&mut self.rng.replay, cfg.batch_size);
        let batch = Batch::from_transitions(&sample)?;
        let targets = td_targets(&batch, &self.spec, &self.target, cfg.discount)?;
        let (grads, losses) = critic_gradient_set(
            &batch,
            &targets,
            &self.spec,
            &self.params,
            &self.combination,
            &self.bank,
            cfg.overlay_mode,
            &mut self.rng.augmentation,
        )?;
        let (direction, diag) = aggregate(
            &grads,
            cfg.aggregation,
            cfg.agreement,
            &cfg.damping,
            &mut self.rng.damping,
        )?;
        optimizer_update(&mut self.params, &direction, &mut self.optimizer)?;
        Ok((losses, diag))
    }

    /// Steps until `total_steps`, calling `after_step` after each one.
    pub fn run(&mut self, mut after_step: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
            after_step(self)?;
        }
        Ok(())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            spec: self.spec,
            params: self.params,
            target_params: self.target,
            optimizer: self.optimizer,
            log: self.log,
        }
    }
}

pub fn train(config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(|_| Ok(()))?;
    Ok(trainer.into_outcome())
}
