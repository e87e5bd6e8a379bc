//! Run configuration in TOML. Every field has a default, so an empty file is a
//! valid config; unknown keys are rejected.

use std::path::{Path, PathBuf};

use cg2a_core::agent::TrainConfig;
use cg2a_core::pixelworld::EnvVariant;
use serde::{Deserialize, Serialize};

use crate::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Overrides the base directory of relative `output_dir` values.
pub const OUTPUT_ROOT_ENV: &str = "CG2A_OUTPUT_ROOT";

/// File name of the effective config echoed into every run directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub variants: Vec<EnvVariant>,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: EnvVariant::ALL.to_vec(),
            episodes: 100,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub output_dir: PathBuf,
    /// Environment steps between intermediate checkpoints.
    pub checkpoint_every: u64,
    /// Diagnostics tables cover this many of the most recent updates.
    pub diagnostics_updates: usize,
    pub eval: EvalConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            output_dir: PathBuf::from("runs/cg2a"),
            checkpoint_every: 5000,
            diagnostics_updates: 1000,
            eval: EvalConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Checks every nested invariant; messages start with the field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir: must not be empty".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every: must be positive".into());
        }
        if self.diagnostics_updates == 0 {
            return bad("diagnostics_updates: must be positive".into());
        }
        if self.eval.variants.is_empty() {
            return bad("eval.variants: must list at least one variant".into());
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes: must be at least 1".into());
        }
        self.train
            .validate()
            .map_err(|e| HarnessError::Config(format!("train.{}", strip_prefix(&e.to_string()))))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| HarnessError::Config(e.to_string().trim_end().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| HarnessError::Config(format!("cannot serialize config: {e}")))
    }

    /// `output_dir`, placed under the output-root variable when that is set
    /// and the path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

fn strip_prefix(msg: &str) -> &str {
    msg.strip_prefix("invalid config: ").unwrap_or(msg)
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
