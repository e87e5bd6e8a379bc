use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cg2a_core::agent::evaluate;
use cg2a_core::pixelworld::{ColorReach, EnvVariant};
use cg2a_core::seed::derive_seed;
use cg2a_harness::commands::load_checkpoint;
use cg2a_harness::RunConfig;

const TINY: &str = r#"
output_dir = "run"
checkpoint_every = 50
diagnostics_updates = 40

[eval]
variants = ["train", "random_colors"]
episodes = 5
seed = 3

[train]
total_steps = 120
batch_size = 8
warmup_steps = 20
buffer_capacity = 200
target_sync_period = 25

[train.env]
cell_px = 2

[train.network]
conv = [{ channels = 4, kernel = 3, stride = 2 }]
dense = [16]

[train.bank]
size = 8
"#;

fn cg2a(args: &[&str], root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cg2a"));
    cmd.args(args).env_remove("CG2A_OUTPUT_ROOT");
    if let Some(r) = root {
        cmd.env("CG2A_OUTPUT_ROOT", r);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn train_into(config: &Path, out: &Path) -> Output {
    let o = cg2a(
        &[
            "train",
            "--quiet",
            "--config",
            config.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

#[test]
fn grad_demo_is_deterministic() {
    let a = cg2a(
        &["grad-demo", "--seed", "1", "--n", "2", "--dim", "4"],
        None,
    );
    let b = cg2a(
        &["grad-demo", "--seed", "1", "--n", "2", "--dim", "4"],
        None,
    );
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("3 gradients of dimension 4"), "{text}");
    let strict = cg2a(
        &[
            "grad-demo",
            "--seed",
            "1",
            "--n",
            "2",
            "--dim",
            "4",
            "--mode",
            "strict",
        ],
        None,
    );
    assert_eq!(strict.status.code(), Some(0));
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad_mode = cg2a(&["grad-demo", "--mode", "sideways"], None);
    assert_eq!(bad_mode.status.code(), Some(2));

    let inverted = write_config(
        dir.path(),
        "bad.toml",
        "[train.damping]\nalpha = 0.5\nbeta = 0.3\n",
    );
    let o = cg2a(&["train", "--config", inverted.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.damping"));

    let unknown = write_config(dir.path(), "unknown.toml", "[train]\nlearning_rat = 1\n");
    assert_eq!(
        cg2a(
            &["show-config", "--config", unknown.to_str().unwrap()],
            None
        )
        .status
        .code(),
        Some(2)
    );

    let missing = dir.path().join("absent.toml");
    assert_eq!(
        cg2a(&["train", "--config", missing.to_str().unwrap()], None)
            .status
            .code(),
        Some(3)
    );

    let junk = write_config(dir.path(), "junk.ckpt", "not a checkpoint");
    let o = cg2a(
        &[
            "eval",
            "--checkpoint",
            junk.to_str().unwrap(),
            "--variant",
            "train",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn empty_config_shows_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_config(dir.path(), "empty.toml", "");
    let o = cg2a(&["show-config", "--config", empty.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    let shown = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(shown, RunConfig::default());
}

#[test]
fn train_writes_every_artifact_and_replays_from_echo() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "tiny.toml", TINY);
    let first = dir.path().join("first");
    train_into(&config, &first);

    for name in [
        "config.toml",
        "metrics.jsonl",
        "magnitudes.csv",
        "cosines.csv",
        "conflict.csv",
        "eval_train.json",
        "eval_random_colors.json",
        "checkpoints/step_0000050.ckpt",
        "checkpoints/step_0000100.ckpt",
        "checkpoints/final.ckpt",
    ] {
        assert!(first.join(name).is_file(), "missing {name}");
    }
    let leftovers: Vec<_> = fs::read_dir(&first)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty());

    let second = dir.path().join("second");
    train_into(&first.join("config.toml"), &second);
    assert_eq!(
        fs::read(first.join("metrics.jsonl")).unwrap(),
        fs::read(second.join("metrics.jsonl")).unwrap()
    );

    let replay = dir.path().join("replay");
    let o = cg2a(
        &[
            "analyze",
            "--log",
            first.join("metrics.jsonl").to_str().unwrap(),
            "--output",
            replay.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for name in ["magnitudes.csv", "cosines.csv", "conflict.csv"] {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(replay.join(name)).unwrap(),
            "{name}"
        );
    }
    let magnitudes = fs::read_to_string(replay.join("magnitudes.csv")).unwrap();
    assert!(
        magnitudes.starts_with("augmentation,mean_normalized_magnitude\nidentity,"),
        "{magnitudes}"
    );

    let o = cg2a(
        &[
            "analyze",
            "--log",
            first.join("metrics.jsonl").to_str().unwrap(),
            "--window",
            "60:90",
            "--output",
            replay.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let conflict = fs::read_to_string(replay.join("conflict.csv")).unwrap();
    assert!(
        conflict.lines().nth(1).unwrap().starts_with("60,90,"),
        "{conflict}"
    );

    let o = cg2a(
        &[
            "analyze",
            "--log",
            first.join("metrics.jsonl").to_str().unwrap(),
            "--window",
            "0:10",
        ],
        None,
    );
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn eval_of_untrained_checkpoint_matches_in_process_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("total_steps = 120", "total_steps = 0");
    let config = write_config(dir.path(), "zero.toml", &text);
    let out = dir.path().join("zero");
    train_into(&config, &out);
    assert!(!out.join("magnitudes.csv").exists());

    let ckpt = out.join("checkpoints/final.ckpt");
    let report_path = dir.path().join("report.json");
    let o = cg2a(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--variant",
            "train",
            "--episodes",
            "100",
            "--seed",
            "9",
            "--output",
            report_path.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    let returns: Vec<f64> = report["returns"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(returns.len(), 100);

    let cfg = RunConfig::from_toml(&text).unwrap();
    let (spec, params) = load_checkpoint(&ckpt).unwrap();
    let oracle = evaluate(&spec, &params, &cfg.train.env, EnvVariant::Train, 100, 9).unwrap();
    assert_eq!(returns, oracle.returns);
    for (i, r) in returns.iter().enumerate() {
        let mut env = ColorReach::new(cfg.train.env.clone()).unwrap();
        let (state, _) = env.reset(derive_seed(9, i as u64), EnvVariant::Train);
        assert!(
            *r >= -1.0 - 1e-9 && *r <= state.optimal_return() + 1e-9,
            "episode {i}: {r}"
        );
    }

    // Without --config the run's echoed config is found next to the checkpoint.
    let o = cg2a(
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--variant",
            "dynamic_background",
            "--episodes",
            "3",
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out
        .join("checkpoints/eval_dynamic_background_seed0.json")
        .is_file());
}

#[test]
fn output_root_variable_relocates_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("total_steps = 120", "total_steps = 30");
    let config = write_config(dir.path(), "tiny.toml", &text);
    let root = dir.path().join("root");
    let o = cg2a(
        &[
            "train",
            "--quiet",
            "--dump-frames",
            "3",
            "--config",
            config.to_str().unwrap(),
        ],
        Some(&root),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(root.join("run/metrics.jsonl").is_file());
    for variant in ["train", "random_colors"] {
        for k in 0..3 {
            let frame = fs::read(root.join(format!("run/frames/{variant}_{k:03}.ppm"))).unwrap();
            assert!(frame.starts_with(b"P6\n16 16\n255\n"));
            assert_eq!(frame.len(), b"P6\n16 16\n255\n".len() + 16 * 16 * 3);
        }
    }
}
