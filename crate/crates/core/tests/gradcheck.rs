//! Backward pass against central finite differences, per primitive and for
//! the composed Q-network critic loss.

use cg2a_core::gradtape::{
    critic_loss, finite_diff_flat, finite_diff_grad, forward_on, init_params, max_relative_error,
    q_forward, ConvLayerSpec, ParamSet, QNetworkSpec, Tape, Tensor, Var, DEFAULT_STEP,
};
use cg2a_core::seed::rng_from_seed;
use rand::Rng;

/// Components smaller than this are compared absolutely; central-difference
/// rounding noise is about `eps * |L| / h`, i.e. ~1e-12 here.
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Builds a loss from flat inputs split by `shapes`, all registered as params.
fn check_primitive(
    shapes: &[Vec<usize>],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let mut rng = rng_from_seed(seed);
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let x = random_vec(&mut rng, total, -1.0, 1.0);
    let eval = |flat: &[f64], grad: bool| {
        let mut tape = Tape::new();
        let mut offset = 0;
        let vars: Vec<Var> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n: usize = s.iter().product();
                let t = Tensor::new(s.clone(), flat[offset..offset + n].to_vec()).unwrap();
                offset += n;
                tape.param(i, t).unwrap()
            })
            .collect();
        let loss = build(&mut tape, &vars);
        let value = tape.value(loss).data()[0];
        let g = grad.then(|| tape.backward(loss).unwrap().into_vec());
        (value, g)
    };
    let analytic = eval(&x, true).1.unwrap();
    let numeric = finite_diff_flat(|v| eval(v, false).0, &x, DEFAULT_STEP);
    max_relative_error(&analytic, &numeric, FLOOR)
}

#[test]
fn primitives_match_finite_differences() {
    type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;
    let cases: Vec<(&str, Vec<Vec<usize>>, Build)> = vec![
        (
            "add+mul+sum",
            vec![vec![5], vec![5]],
            Box::new(|t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                let m = t.mul(s, v[1]).unwrap();
                t.sum(m)
            }),
        ),
        (
            "scale+square",
            vec![vec![6]],
            Box::new(|t, v| {
                let s = t.scale(v[0], -1.7);
                let q = t.square(s);
                t.sum(q)
            }),
        ),
        (
            "relu",
            vec![vec![7]],
            Box::new(|t, v| {
                let r = t.relu(v[0]);
                let q = t.square(r);
                t.sum(q)
            }),
        ),
        (
            "matmul_nt+bias_add+reshape",
            vec![vec![3, 4], vec![2, 4], vec![2]],
            Box::new(|t, v| {
                let z = t.matmul_nt(v[0], v[1]).unwrap();
                let z = t.bias_add(z, v[2]).unwrap();
                let z = t.reshape(z, vec![6]).unwrap();
                let q = t.square(z);
                t.sum(q)
            }),
        ),
        (
            "conv2d",
            vec![vec![2, 3, 7, 6], vec![4, 3, 3, 3], vec![4]],
            Box::new(|t, v| {
                let c = t.conv2d(v[0], v[1], v[2], 2).unwrap();
                let q = t.square(c);
                t.sum(q)
            }),
        ),
        (
            "select_mse",
            vec![vec![3, 4]],
            Box::new(|t, v| t.select_mse(v[0], &[0, 3, 1], &[0.5, -0.2, 1.0]).unwrap()),
        ),
    ];
    for (name, shapes, build) in &cases {
        for seed in 0..5 {
            let err = check_primitive(shapes, seed, build);
            assert!(err <= TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

pub fn small_qnet() -> QNetworkSpec {
    QNetworkSpec {
        input: [9, 11, 11],
        conv: vec![
            ConvLayerSpec {
                channels: 4,
                kernel: 3,
                stride: 2,
            },
            ConvLayerSpec {
                channels: 4,
                kernel: 3,
                stride: 2,
            },
        ],
        dense: vec![8],
        actions: 4,
    }
}

/// Minimum distance of every ReLU input from its hinge at a verification
/// point. A step of 1e-4 moves pre-activations by far less than this.
const HINGE_MARGIN: f64 = 1e-3;

#[test]
fn qnetwork_critic_loss_matches_finite_differences() {
    let spec = small_qnet();
    let batch = 8;
    let mut worst: f64 = 0.0;
    let mut redraws = 0;
    for seed in 0..20u64 {
        let params = init_params(&spec, seed).unwrap();
        let mut rng = rng_from_seed(1000 + seed);
        let n: usize = batch * spec.input.iter().product::<usize>();
        // Redraw the batch until no ReLU sits on a hinge.
        let (obs, actions, targets, q, mut tape) = loop {
            let obs = Tensor::new(
                vec![batch, spec.input[0], spec.input[1], spec.input[2]],
                random_vec(&mut rng, n, 0.0, 1.0),
            )
            .unwrap();
            let actions: Vec<usize> = (0..batch)
                .map(|_| rng.random_range(0..spec.actions))
                .collect();
            let targets = random_vec(&mut rng, batch, -1.0, 1.0);
            let (q, tape) = q_forward(&spec, &params, &obs).unwrap();
            if tape.relu_margin().unwrap() > HINGE_MARGIN {
                break (obs, actions, targets, q, tape);
            }
            redraws += 1;
        };
        let loss = critic_loss(&mut tape, q, &actions, &targets).unwrap();
        let analytic = tape.backward(loss).unwrap();

        let loss_of = |p: &ParamSet| {
            let mut t = Tape::new();
            let q = forward_on(&mut t, &spec, p, &obs, false).unwrap();
            let l = critic_loss(&mut t, q, &actions, &targets).unwrap();
            t.value(l).data()[0]
        };
        let numeric = finite_diff_grad(loss_of, &params, DEFAULT_STEP).unwrap();
        let err = max_relative_error(analytic.as_slice(), &numeric, FLOOR);
        worst = worst.max(err);
        assert!(err <= TOL, "seed {seed}: relative error {err:e}");
    }
    println!("q-network gradient check: worst relative error {worst:e} over 20 seeds ({redraws} redraws)");
}
