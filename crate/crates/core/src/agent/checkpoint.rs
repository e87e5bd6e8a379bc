//! Checkpoint = parameter file followed by an optimizer section:
//!
//! ```text
//! magic          8 bytes  "CG2AOPT\0"
//! version        u32      OPTIMIZER_FORMAT_VERSION
//! config length  u32
//! config         JSON-encoded OptimizerConfig
//! step           u64
//! moment count   u64
//! m, v           f64 x count each
//! ```

use std::io::{Read, Write};

use super::{OptimizerConfig, OptimizerState, Result};
use crate::gradtape::{
    read_f64s, read_params, read_u32, read_u64, write_params, CheckpointError, ParamSet,
    QNetworkSpec,
};

pub const OPTIMIZER_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CG2AOPT\0";

pub fn write_checkpoint<W: Write>(
    mut w: W,
    spec: &QNetworkSpec,
    params: &ParamSet,
    optimizer: &OptimizerState,
) -> Result<()> {
    write_params(&mut w, spec, params)?;
    let header = |e: serde_json::Error| CheckpointError::Header(e.to_string());
    let config = serde_json::to_vec(&optimizer.config).map_err(header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&OPTIMIZER_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&optimizer.step.to_le_bytes());
    buf.extend_from_slice(&(optimizer.m.len() as u64).to_le_bytes());
    for v in optimizer.m.iter().chain(&optimizer.v) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(CheckpointError::from)?;
    Ok(())
}

/// Reads a checkpoint; a bare parameter file yields no optimizer state.
pub fn read_checkpoint<R: Read>(
    mut r: R,
) -> Result<(QNetworkSpec, ParamSet, Option<OptimizerState>)> {
    let (spec, params) = read_params(&mut r)?;
    let mut magic = [0u8; 8];
    let mut filled = 0;
    while filled < magic.len() {
        let n = r
            .read(&mut magic[filled..])
            .map_err(CheckpointError::from)?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    if filled == 0 {
        return Ok((spec, params, None));
    }
    if filled < magic.len() || &magic != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = read_u32(&mut r)?;
    if version != OPTIMIZER_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            what: "optimizer",
            found: version,
            expected: OPTIMIZER_FORMAT_VERSION,
        }
        .into());
    }
    let len = read_u32(&mut r)? as usize;
    if len > 1 << 16 {
        return Err(CheckpointError::Header(format!("optimizer config length {len}")).into());
    }
    let mut config = vec![0u8; len];
    r.read_exact(&mut config).map_err(CheckpointError::from)?;
    let config: OptimizerConfig =
        serde_json::from_slice(&config).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let step = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let expected = OptimizerState::new(config, params.num_params()).m.len();
    if count != expected {
        return Err(CheckpointError::Header(format!(
            "{count} optimizer moments, expected {expected}"
        ))
        .into());
    }
    let m = read_f64s(&mut r, count)?;
    let v = read_f64s(&mut r, count)?;
    Ok((spec, params, Some(OptimizerState { config, step, m, v })))
}
