use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cg2a_core::agent::{
    evaluate, read_checkpoint, write_checkpoint, EvalReport, TrainConfig, Trainer,
};
use cg2a_core::diagnostics::{render_tables, DiagnosticsTables, MetricsLog, Window};
use cg2a_core::gradkit::{cg2a_step, AgreementMode, DampingDistribution, GradientSet};
use cg2a_core::gradtape::{ParamSet, QNetworkSpec};
use cg2a_core::pixelworld::{write_ppm, Action, ColorReach, EnvConfig, EnvVariant, NUM_ACTIONS};
use cg2a_core::seed::{derive_seed, rng_from_seed, streams};
use rand::Rng;

use crate::config::{parse_config, resolve_output, RunConfig, ECHO_FILE};
use crate::fsio::{atomic_write, read};
use crate::{HarnessError, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MAGNITUDES_FILE: &str = "magnitudes.csv";
pub const COSINES_FILE: &str = "cosines.csv";
pub const CONFLICT_FILE: &str = "conflict.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub config: PathBuf,
    /// Replaces `output_dir` from the config file.
    pub output: Option<PathBuf>,
    /// Write this many rendered frames per evaluation variant.
    pub dump_frames: usize,
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub steps: u64,
    pub updates: usize,
    pub episodes: usize,
    pub checkpoints: Vec<PathBuf>,
    pub evals: Vec<EvalReport>,
    pub diagnostics_window: Option<Window>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:07}.ckpt")
}

fn checkpoint_error(path: &Path, e: cg2a_core::agent::AgentError) -> HarnessError {
    match e {
        cg2a_core::agent::AgentError::Checkpoint(c) => HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, c),
        ),
        other => other.into(),
    }
}

fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(
        &mut bytes,
        trainer.spec(),
        trainer.params(),
        trainer.optimizer(),
    )
    .map_err(|e| checkpoint_error(path, e))?;
    atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(QNetworkSpec, ParamSet)> {
    let bytes = read(path)?;
    let (spec, params, _) =
        read_checkpoint(bytes.as_slice()).map_err(|e| checkpoint_error(path, e))?;
    Ok((spec, params))
}

/// Writes the three diagnostics tables into `dir`.
pub fn write_diagnostics(
    log: &MetricsLog,
    window: Window,
    labels: &[String],
    dir: &Path,
) -> Result<DiagnosticsTables> {
    let tables = render_tables(log, window, labels)?;
    atomic_write(&dir.join(MAGNITUDES_FILE), &tables.magnitudes)?;
    atomic_write(&dir.join(COSINES_FILE), &tables.cosines)?;
    atomic_write(&dir.join(CONFLICT_FILE), &tables.conflict)?;
    Ok(tables)
}

fn eval_file(variant: EnvVariant) -> String {
    format!("eval_{variant}.json")
}

fn report_json(report: &EvalReport) -> Result<Vec<u8>> {
    let mut bytes =
        serde_json::to_vec_pretty(report).map_err(|e| HarnessError::Other(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Runs one training job described by a config file.
pub fn train_command(opts: &TrainOptions) -> Result<TrainSummary> {
    let mut cfg = parse_config(&opts.config)?;
    if let Some(out) = &opts.output {
        cfg.output_dir = out.clone();
    }
    run_training(&cfg, opts.dump_frames, opts.quiet)
}

pub fn run_training(cfg: &RunConfig, dump_frames: usize, quiet: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    atomic_write(&out.join(ECHO_FILE), cfg.to_toml()?.as_bytes())?;
    if dump_frames > 0 {
        dump_variant_frames(cfg, &out.join("frames"), dump_frames)?;
    }

    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut checkpoints = Vec::new();
    while !trainer.is_finished() {
        trainer.step()?;
        let t = trainer.steps_done();
        if t % cfg.checkpoint_every == 0 && !trainer.is_finished() {
            let path = out.join(CHECKPOINT_DIR).join(checkpoint_name(t));
            save_checkpoint(&path, &trainer)?;
            checkpoints.push(path);
            if !quiet {
                let returns = trainer.log().episode_returns();
                let recent = &returns[returns.len().saturating_sub(20)..];
                let mean = recent.iter().sum::<f64>() / recent.len().max(1) as f64;
                eprintln!(
                    "step {t}/{}: {} episodes, recent mean return {mean:.3}",
                    cfg.train.total_steps,
                    returns.len()
                );
            }
        }
    }
    let final_path = out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT);
    save_checkpoint(&final_path, &trainer)?;
    checkpoints.push(final_path);
    atomic_write(&out.join(METRICS_FILE), &trainer.log().to_jsonl())?;

    let log = trainer.log();
    let updates = log.update_steps().count();
    let diagnostics_window = if updates > 0 {
        let window = log.last_updates(cfg.diagnostics_updates);
        write_diagnostics(log, window, &trainer.combination().labels(), &out)?;
        Some(window)
    } else {
        None
    };

    let mut evals = Vec::new();
    for &variant in &cfg.eval.variants {
        let report = evaluate(
            trainer.spec(),
            trainer.params(),
            &cfg.train.env,
            variant,
            cfg.eval.episodes,
            cfg.eval.seed,
        )?;
        atomic_write(&out.join(eval_file(variant)), &report_json(&report)?)?;
        if !quiet {
            eprintln!(
                "eval {variant}: mean return {:.3} (std {:.3})",
                report.mean_return, report.std_return
            );
        }
        evals.push(report);
    }
    Ok(TrainSummary {
        output_dir: out,
        steps: trainer.steps_done(),
        updates,
        episodes: log.episode_returns().len(),
        checkpoints,
        evals,
        diagnostics_window,
    })
}

/// Renders reset and random-walk frames of each evaluation variant as PPM.
fn dump_variant_frames(cfg: &RunConfig, dir: &Path, count: usize) -> Result<()> {
    let env_config = &cfg.train.env;
    let res = env_config.resolution();
    let mut rng = rng_from_seed(derive_seed(cfg.eval.seed, streams::EXPLORATION));
    for &variant in &cfg.eval.variants {
        let mut env =
            ColorReach::new(env_config.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
        env.reset(cfg.eval.seed, variant);
        for k in 0..count {
            if k > 0 {
                let action =
                    Action::from_index(rng.random_range(0..NUM_ACTIONS)).expect("action index");
                let (_, r) = env
                    .step(action)
                    .map_err(|e| HarnessError::Other(e.to_string()))?;
                if r.done {
                    env.reset(derive_seed(cfg.eval.seed, k as u64), variant);
                }
            }
            let frame = env.current_frame().expect("environment was reset");
            let mut bytes = Vec::new();
            write_ppm(&mut bytes, frame, res, res).map_err(|e| HarnessError::io(dir, e))?;
            atomic_write(&dir.join(format!("{variant}_{k:03}.ppm")), &bytes)?;
        }
    }
    Ok(())
}

fn sibling_config(path: &Path) -> Option<PathBuf> {
    let dir = path.parent()?;
    [Some(dir), dir.parent()]
        .into_iter()
        .flatten()
        .map(|d| d.join(ECHO_FILE))
        .find(|p| p.is_file())
}

/// Environment settings implied by a network input of `[K*3, H, W]` on the
/// default grid.
fn env_from_spec(spec: &QNetworkSpec) -> Result<EnvConfig> {
    let [c, h, w] = spec.input;
    let base = EnvConfig::default();
    if c % 3 != 0 || h != w || h % base.grid != 0 {
        return Err(HarnessError::Config(format!(
            "cannot infer the environment from input shape {:?}; pass --config",
            spec.input
        )));
    }
    let env = EnvConfig {
        cell_px: h / base.grid,
        frames: c / 3,
        ..base
    };
    env.validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(env)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub variant: EnvVariant,
    pub episodes: usize,
    pub seed: u64,
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn eval_command(opts: &EvalOptions) -> Result<(PathBuf, EvalReport)> {
    let (spec, params) = load_checkpoint(&opts.checkpoint)?;
    let config = opts
        .config
        .clone()
        .or_else(|| sibling_config(&opts.checkpoint));
    let env = match config {
        Some(path) => parse_config(&path)?.train.env,
        None => env_from_spec(&spec)?,
    };
    if env.observation_shape() != spec.input {
        return Err(HarnessError::Config(format!(
            "environment renders {:?} but the checkpoint expects {:?}",
            env.observation_shape(),
            spec.input
        )));
    }
    if opts.episodes == 0 {
        return Err(HarnessError::Config("episodes: must be at least 1".into()));
    }
    let report = evaluate(&spec, &params, &env, opts.variant, opts.episodes, opts.seed)?;
    let path = match &opts.output {
        Some(p) => resolve_output(p),
        None => opts
            .checkpoint
            .with_file_name(format!("eval_{}_seed{}.json", opts.variant, opts.seed)),
    };
    atomic_write(&path, &report_json(&report)?)?;
    Ok((path, report))
}

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub log: PathBuf,
    pub window: Option<Window>,
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

pub fn analyze_command(opts: &AnalyzeOptions) -> Result<(PathBuf, Window, DiagnosticsTables)> {
    let bytes = read(&opts.log)?;
    let log = MetricsLog::read_jsonl(bytes.as_slice())?;
    let config_path = opts.config.clone().or_else(|| sibling_config(&opts.log));
    let cfg = config_path.map(|p| parse_config(&p)).transpose()?;
    let members = log
        .records()
        .iter()
        .find_map(|r| r.update.as_ref())
        .map(|u| u.per_grad_l2_norm.len())
        .ok_or_else(|| HarnessError::Other("log contains no update records".into()))?;
    let labels = match &cfg {
        Some(c) => c.train.effective_combination().labels(),
        None => (0..members).map(|i| format!("g{i}")).collect(),
    };
    if labels.len() != members {
        return Err(HarnessError::Config(format!(
            "config describes {} augmentations but the log records {members} gradients",
            labels.len()
        )));
    }
    let updates = cfg
        .as_ref()
        .map_or(RunConfig::default().diagnostics_updates, |c| {
            c.diagnostics_updates
        });
    let window = opts.window.unwrap_or_else(|| log.last_updates(updates));
    let dir = match &opts.output {
        Some(d) => resolve_output(d),
        None => opts
            .log
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let tables = write_diagnostics(&log, window, &labels, &dir)?;
    Ok((dir, window, tables))
}

/// Draws `n + 1` gradients of length `dim` uniformly from `[-1, 1)` and
/// reports how they are combined.
pub fn grad_demo(seed: u64, n: usize, dim: usize, mode: AgreementMode) -> Result<String> {
    if dim == 0 {
        return Err(HarnessError::Config("dim: must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let vecs: Vec<Vec<f64>> = (0..=n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let grads = GradientSet::from_vecs(vecs).map_err(|e| HarnessError::Numeric(e.to_string()))?;
    let mut damping_rng = rng_from_seed(derive_seed(seed, streams::DAMPING));
    let (combined, diag) = cg2a_step(
        &grads,
        &mut damping_rng,
        mode,
        &DampingDistribution::default(),
    )
    .map_err(|e| HarnessError::Numeric(e.to_string()))?;
    let mask = cg2a_core::gradkit::conflict_mask(&grads, mode);

    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:+.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let mode_name = match mode {
        AgreementMode::StrictPaper => "strict",
        AgreementMode::SignSymmetric => "symmetric",
    };
    writeln!(
        s,
        "seed {seed}, {} gradients of dimension {dim}, mode {mode_name}",
        n + 1
    )
    .unwrap();
    const SHOWN: usize = 16;
    let shown = dim.min(SHOWN);
    let ellipsis = if dim > SHOWN { " ..." } else { "" };
    for (i, g) in grads.iter().enumerate() {
        writeln!(s, "g{i}: {}{ellipsis}", fmt(&g.as_slice()[..shown])).unwrap();
    }
    writeln!(
        s,
        "weights: {}{}",
        fmt(&diag.weights.w),
        if diag.weights.fallback_used {
            " (uniform fallback)"
        } else {
            ""
        }
    )
    .unwrap();
    let bits: String = mask.bits[..shown]
        .iter()
        .map(|b| if *b { '+' } else { 'x' })
        .collect();
    writeln!(
        s,
        "mask: {} of {dim} components agree, conflict fraction {:.6}: {bits}{ellipsis}",
        dim - mask.conflict_count(),
        mask.conflict_fraction()
    )
    .unwrap();
    writeln!(s, "gamma: {:.6}", diag.gamma_sampled).unwrap();
    writeln!(
        s,
        "combined: {}{ellipsis}",
        fmt(&combined.as_slice()[..shown])
    )
    .unwrap();
    Ok(s)
}

/// The effective config for a file, or the defaults when no file is given.
pub fn show_config(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => parse_config(p)?.to_toml(),
        None => RunConfig::default().to_toml(),
    }
}

/// A run config around `train` with everything else at its default.
pub fn run_config_for(train: TrainConfig, output_dir: PathBuf) -> RunConfig {
    RunConfig {
        output_dir,
        train,
        ..RunConfig::default()
    }
}
