use cg2a_core::agent::{
    critic_gradient_set, evaluate, sync_target, td_targets, train, Aggregation, Batch,
    NetworkConfig, OptimizerConfig, ReplayBuffer, TrainConfig, Trainer, Transition,
};
use cg2a_core::augbox::{
    invocation_count, make_combination, AugmentationSpec, Combination, DistractorBank, OverlayMode,
};
use cg2a_core::gradkit::{pairwise_cosine, DampingDistribution};
use cg2a_core::gradtape::{critic_loss, init_params, q_forward, q_values, ConvLayerSpec, Tensor};
use cg2a_core::pixelworld::{Action, ColorReach, EnvVariant, NUM_ACTIONS};
use cg2a_core::seed::{derive_seed, rng_from_seed, stream_rng, streams};
use rand::Rng;

const WARMUP: u64 = 16;

fn small_config(updates: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_steps: WARMUP + updates,
        batch_size: 8,
        warmup_steps: WARMUP,
        buffer_capacity: 500,
        target_sync_period: 25,
        optimizer: OptimizerConfig::Sgd { lr: 0.05 },
        network: NetworkConfig {
            conv: vec![ConvLayerSpec {
                channels: 4,
                kernel: 3,
                stride: 2,
            }],
            dense: vec![16],
        },
        ..TrainConfig::default()
    };
    cfg.env.cell_px = 2;
    cfg.bank.size = 8;
    cfg
}

fn identity_ladder(aggregation: Aggregation) -> TrainConfig {
    TrainConfig {
        aggregation,
        combination: Combination::identity_only(),
        damping: DampingDistribution::constant(1.0).unwrap(),
        ..small_config(200)
    }
}

/// Q-learning with plain SGD on raw observations, written against the
/// building blocks only and drawing from the same random streams.
fn plain_sgd_q_learning(cfg: &TrainConfig) -> Vec<f64> {
    let spec = cfg.network_spec();
    let mut params = init_params(&spec, derive_seed(cfg.seed, streams::INIT)).unwrap();
    let mut target = params.clone();
    let lr = match cfg.optimizer {
        OptimizerConfig::Sgd { lr } => lr,
        _ => unreachable!(),
    };
    let mut explore = stream_rng(cfg.seed, streams::EXPLORATION);
    let mut replay_rng = stream_rng(cfg.seed, streams::REPLAY);
    let mut episodes = stream_rng(cfg.seed, streams::EPISODES);
    let mut env = ColorReach::new(cfg.env.clone()).unwrap();
    let (_, mut obs) = env.reset(episodes.random(), cfg.train_variant);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    for t in 0..cfg.total_steps {
        let action = if t < cfg.warmup_steps {
            explore.random_range(0..NUM_ACTIONS)
        } else {
            let temp = cfg.temperature.at(t, cfg.total_steps);
            cg2a_core::agent::select_action(&spec, &params, &obs, temp, &mut explore).unwrap()
        };
        let (_, r) = env.step(Action::from_index(action).unwrap()).unwrap();
        buffer.push(Transition {
            obs: std::mem::replace(&mut obs, r.observation.clone()),
            action,
            reward: r.reward,
            next_obs: r.observation,
            done: r.goal_reached,
        });
        if r.done {
            obs = env.reset(episodes.random(), cfg.train_variant).1;
        }
        if t >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            let batch =
                Batch::from_transitions(&buffer.sample(&mut replay_rng, cfg.batch_size)).unwrap();
            let targets = td_targets(&batch, &spec, &target, cfg.discount).unwrap();
            let (q, mut tape) = q_forward(&spec, &params, &batch.obs).unwrap();
            let loss = critic_loss(&mut tape, q, &batch.actions, &targets).unwrap();
            let g = tape.backward(loss).unwrap();
            let mut flat = params.flatten();
            for (p, gi) in flat.iter_mut().zip(g.as_slice()) {
                *p -= lr * gi;
            }
            params.assign_flat(&flat).unwrap();
        }
        if (t + 1) % cfg.target_sync_period == 0 {
            target = params.clone();
        }
    }
    params.flatten()
}

#[test]
fn same_seed_gives_bit_identical_parameters() {
    let cfg = TrainConfig {
        aggregation: Aggregation::Cg2a,
        ..small_config(100)
    };
    let a = train(cfg.clone()).unwrap();
    let b = train(cfg).unwrap();
    assert_eq!(a.log.update_steps().count(), 100);
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn identity_only_modes_follow_plain_sgd() {
    let oracle = plain_sgd_q_learning(&identity_ladder(Aggregation::NoAug));
    for mode in [
        Aggregation::NoAug,
        Aggregation::Cg2a,
        Aggregation::GasOnly,
        Aggregation::SgsOnly,
    ] {
        let out = train(identity_ladder(mode)).unwrap();
        assert_eq!(out.log.update_steps().count(), 200);
        let got = out.params.flatten();
        assert!(
            got.iter()
                .zip(&oracle)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            "{mode:?} diverged from plain SGD"
        );
    }
}

#[test]
fn successors_are_never_augmented() {
    let cfg = small_config(30);
    let members = cfg.effective_combination().len() as u64;
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    while !trainer.is_finished() {
        let before = invocation_count();
        let updating = trainer.steps_done() >= cfg.warmup_steps;
        trainer.step().unwrap();
        let expected = if updating {
            members * cfg.batch_size as u64
        } else {
            0
        };
        assert_eq!(invocation_count() - before, expected);
    }

    let spec = trainer.spec().clone();
    let mut env = ColorReach::new(cfg.env.clone()).unwrap();
    let (_, o) = env.reset(1, EnvVariant::Train);
    let (_, r) = env.step(Action::Up).unwrap();
    let t = Transition {
        obs: o,
        action: 0,
        reward: r.reward,
        next_obs: r.observation,
        done: false,
    };
    let batch = Batch::from_transitions(&[&t, &t]).unwrap();
    let before = invocation_count();
    td_targets(&batch, &spec, trainer.target_params(), 0.99).unwrap();
    assert_eq!(invocation_count(), before);
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buffer = ReplayBuffer::new(1000);
    for i in 0..1500usize {
        buffer.push(i);
    }
    let mut rng = rng_from_seed(11);
    let mut counts = vec![0u64; 1000];
    let calls = 100_000;
    let batch = 64;
    for _ in 0..calls {
        for slot in buffer.sample_slots(&mut rng, batch) {
            counts[slot] += 1;
        }
    }
    let expected = (calls * batch) as f64 / 1000.0;
    let worst = counts
        .iter()
        .map(|c| (*c as f64 - expected).abs() / expected)
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "worst relative deviation {worst}");
}

#[test]
fn target_sync_schedule() {
    let mut cfg = small_config(20);
    cfg.target_sync_period = 1;
    let mut trainer = Trainer::new(cfg).unwrap();
    while !trainer.is_finished() {
        trainer.step().unwrap();
        assert_eq!(trainer.params(), trainer.target_params());
    }

    let mut cfg = small_config(40);
    cfg.target_sync_period = 25;
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut last = trainer.target_params().clone();
    while !trainer.is_finished() {
        trainer.step().unwrap();
        let t = trainer.steps_done();
        if t.is_multiple_of(25) {
            assert_eq!(trainer.params(), trainer.target_params());
            let x = Tensor::new(vec![1, 9, 16, 16], vec![0.3; 9 * 256]).unwrap();
            let spec = trainer.spec();
            assert_eq!(
                q_values(spec, trainer.params(), &x).unwrap(),
                q_values(spec, trainer.target_params(), &x).unwrap()
            );
        } else {
            assert_eq!(&last, trainer.target_params());
        }
        last = trainer.target_params().clone();
    }

    let mut a = init_params(&small_config(0).network_spec(), 1).unwrap();
    let b = init_params(&small_config(0).network_spec(), 2).unwrap();
    sync_target(&b, &mut a);
    assert_eq!(a, b);
}

#[test]
fn zero_steps_returns_initial_parameters() {
    let cfg = small_config(0);
    let cfg = TrainConfig {
        total_steps: 0,
        ..cfg
    };
    let init = init_params(&cfg.network_spec(), derive_seed(cfg.seed, streams::INIT)).unwrap();
    let out = train(cfg).unwrap();
    assert_eq!(out.params, init);
    assert!(out.log.is_empty());
}

#[test]
fn invalid_config_fails_before_stepping() {
    let cfg = TrainConfig {
        discount: 1.0,
        ..small_config(10)
    };
    assert!(Trainer::new(cfg).is_err());
}

#[test]
fn untrained_greedy_policy_matches_episode_oracle() {
    let cfg = small_config(0);
    let spec = cfg.network_spec();
    let params = init_params(&spec, 5).unwrap();
    let seed = 77;
    let report = evaluate(&spec, &params, &cfg.env, EnvVariant::Train, 100, seed).unwrap();
    assert_eq!(
        report,
        evaluate(&spec, &params, &cfg.env, EnvVariant::Train, 100, seed).unwrap()
    );
    for (i, got) in report.returns.iter().enumerate() {
        let mut env = ColorReach::new(cfg.env.clone()).unwrap();
        let (state, mut obs) = env.reset(derive_seed(seed, i as u64), EnvVariant::Train);
        let mut total = 0.0;
        loop {
            let mut x = vec![0.0; obs.len()];
            obs.write_unit(&mut x);
            let [c, h, w] = obs.shape();
            let q = q_values(&spec, &params, &Tensor::new(vec![1, c, h, w], x).unwrap()).unwrap();
            let row = q.row(0);
            let best = (0..row.len()).fold(0, |b, a| if row[a] > row[b] { a } else { b });
            let (_, r) = env.step(Action::from_index(best).unwrap()).unwrap();
            total += r.reward;
            if r.done {
                break;
            }
            obs = r.observation;
        }
        assert_eq!(*got, total);
        assert!((-1.0 - 1e-9..=state.optimal_return() + 1e-9).contains(got));
    }
}

#[test]
fn default_combination_gradients_are_not_all_aligned() {
    let mut cfg = small_config(1000 - WARMUP);
    cfg.combination = Combination::default_set();
    cfg.aggregation = Aggregation::Cg2a;
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    trainer.run(|_| Ok(())).unwrap();
    let spec = trainer.spec().clone();
    let params = trainer.params().clone();

    let mut env = ColorReach::new(cfg.env.clone()).unwrap();
    let mut items = Vec::new();
    let mut rng = rng_from_seed(3);
    let (_, mut obs) = env.reset(9, EnvVariant::Train);
    for _ in 0..16 {
        let action = rng.random_range(0..NUM_ACTIONS);
        let (_, r) = env.step(Action::from_index(action).unwrap()).unwrap();
        items.push(Transition {
            obs: std::mem::replace(&mut obs, r.observation.clone()),
            action,
            reward: r.reward,
            next_obs: r.observation,
            done: r.goal_reached,
        });
        if r.done {
            obs = env.reset(rng.random(), EnvVariant::Train).1;
        }
    }
    let refs: Vec<&Transition> = items.iter().collect();
    let batch = Batch::from_transitions(&refs).unwrap();
    let targets = td_targets(&batch, &spec, trainer.target_params(), cfg.discount).unwrap();
    let res = cfg.env.resolution();
    let bank = DistractorBank::generate(cfg.bank.seed, cfg.bank.size, res, res);
    let (grads, _) = critic_gradient_set(
        &batch,
        &targets,
        &spec,
        &params,
        &Combination::default_set(),
        &bank,
        OverlayMode::Convex,
        &mut rng,
    )
    .unwrap();
    assert_eq!(grads.len(), 4);
    let cos = pairwise_cosine(&grads);
    let off_diag_below_one = (0..4).any(|i| (0..4).any(|j| i != j && cos[i][j] < 1.0));
    assert!(off_diag_below_one, "{cos:?}");
}

#[test]
fn zero_strength_overlay_gradient_matches_identity() {
    let cfg = small_config(0);
    let spec = cfg.network_spec();
    let params = init_params(&spec, 4).unwrap();
    let mut env = ColorReach::new(cfg.env.clone()).unwrap();
    let (_, o) = env.reset(2, EnvVariant::Train);
    let (_, r) = env.step(Action::Left).unwrap();
    let t = Transition {
        obs: o,
        action: 2,
        reward: r.reward,
        next_obs: r.observation,
        done: false,
    };
    let batch = Batch::from_transitions(&[&t, &t, &t]).unwrap();
    let targets = td_targets(&batch, &spec, &params, cfg.discount).unwrap();
    let res = cfg.env.resolution();
    let bank = DistractorBank::generate(0, 4, res, res);
    let combo = make_combination(&[
        AugmentationSpec::Identity,
        AugmentationSpec::Overlay { mu: 0.0 },
    ])
    .unwrap();
    let (grads, losses) = critic_gradient_set(
        &batch,
        &targets,
        &spec,
        &params,
        &combo,
        &bank,
        OverlayMode::Convex,
        &mut rng_from_seed(0),
    )
    .unwrap();
    assert_eq!(grads[0], grads[1]);
    assert_eq!(losses[0], losses[1]);
}

/// Full-resolution default run: about two hours on one core, so opt-in with
/// `cargo test -- --ignored`.
#[test]
#[ignore = "full-scale run, about two hours on one core"]
fn default_cg2a_run_learns_the_train_variant() {
    let cfg = TrainConfig::default();
    let out = train(cfg.clone()).unwrap();
    let report = evaluate(
        &out.spec,
        &out.params,
        &cfg.env,
        EnvVariant::Train,
        100,
        1000,
    )
    .unwrap();
    assert!(
        report.mean_return > 0.5,
        "mean return {}",
        report.mean_return
    );
}
