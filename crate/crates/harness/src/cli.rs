//! Argument parsing and dispatch. Exit codes: 0 success, 1 other failure,
//! 2 config or usage error, 3 i/o error, 4 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use cg2a_core::diagnostics::Window;
use cg2a_core::gradkit::AgreementMode;
use cg2a_core::pixelworld::EnvVariant;
use clap::{Parser, Subcommand};

use crate::commands::{
    analyze_command, eval_command, grad_demo, show_config, train_command, AnalyzeOptions,
    EvalOptions, TrainOptions,
};
use crate::{exit, Result};

#[derive(Debug, Parser)]
#[command(
    name = "cg2a",
    version,
    about = "Train, evaluate and analyze cg2a agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and write metrics, checkpoints, diagnostics and evaluations.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, replacing `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Debug aid: render this many PPM frames per evaluation variant.
        #[arg(long, default_value_t = 0)]
        dump_frames: usize,
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: EnvVariant,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config describing the environment; defaults to the run's echoed config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; defaults to a file next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute the diagnostics tables from a metrics log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Half-open step range START:END; defaults to the most recent updates.
        #[arg(long)]
        window: Option<Window>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for the CSV files; defaults to the log's directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Combine a random gradient set of N+1 members and print every stage.
    GradDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of augmentations; the set holds N+1 gradients.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// strict or symmetric.
        #[arg(long, default_value = "symmetric")]
        mode: AgreementMode,
    },
    /// Print the effective config (defaults when no file is given).
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_variant(s: &str) -> std::result::Result<EnvVariant, String> {
    s.parse()
        .map_err(|e: cg2a_core::pixelworld::EnvError| e.to_string())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    let io = |e| crate::HarnessError::io("<stdout>", e);
    match command {
        Command::Train {
            config,
            output,
            dump_frames,
            quiet,
        } => {
            let summary = train_command(&TrainOptions {
                config,
                output,
                dump_frames,
                quiet,
            })?;
            writeln!(
                out,
                "trained {} steps ({} updates, {} episodes) into {}",
                summary.steps,
                summary.updates,
                summary.episodes,
                summary.output_dir.display()
            )
            .map_err(io)?;
            for r in &summary.evals {
                writeln!(
                    out,
                    "{}: mean return {:.4} (std {:.4})",
                    r.variant, r.mean_return, r.std_return
                )
                .map_err(io)?;
            }
        }
        Command::Eval {
            checkpoint,
            variant,
            episodes,
            seed,
            config,
            output,
        } => {
            let (path, report) = eval_command(&EvalOptions {
                checkpoint,
                variant,
                episodes,
                seed,
                config,
                output,
            })?;
            writeln!(
                out,
                "{}: mean return {:.4} (std {:.4}) over {} episodes -> {}",
                report.variant,
                report.mean_return,
                report.std_return,
                report.episodes,
                path.display()
            )
            .map_err(io)?;
        }
        Command::Analyze {
            log,
            window,
            config,
            output,
        } => {
            let (dir, window, _) = analyze_command(&AnalyzeOptions {
                log,
                window,
                config,
                output,
            })?;
            writeln!(
                out,
                "wrote diagnostics for window {window} to {}",
                dir.display()
            )
            .map_err(io)?;
        }
        Command::GradDemo { seed, n, dim, mode } => {
            out.write_all(grad_demo(seed, n, dim, mode)?.as_bytes())
                .map_err(io)?;
        }
        Command::ShowConfig { config } => {
            out.write_all(show_config(config.as_deref())?.as_bytes())
                .map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
