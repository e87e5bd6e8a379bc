//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "CG2APRM\0"
//! format version   u32      PARAMS_FORMAT_VERSION
//! flatten order    u32      FLATTEN_ORDER_VERSION
//! spec fingerprint u64      QNetworkSpec::fingerprint
//! spec length      u32
//! spec             JSON-encoded QNetworkSpec
//! value count      u64
//! values           f64 x count, flattening order
//! ```

use std::io::{Read, Write};

use thiserror::Error;

use super::network::{init_params, FLATTEN_ORDER_VERSION};
use super::{ParamSet, QNetworkSpec};

pub const PARAMS_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CG2APRM\0";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a parameter file (bad magic)")]
    BadMagic,
    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("corrupt header: {0}")]
    Header(String),
    #[error("spec fingerprint {found:#018x} does not match {expected:#018x}")]
    Fingerprint { found: u64, expected: u64 },
    #[error("non-finite parameter value at index {0}")]
    NonFinite(usize),
}

pub fn write_params<W: Write>(
    mut w: W,
    spec: &QNetworkSpec,
    params: &ParamSet,
) -> Result<(), CheckpointError> {
    if !params.matches_spec(spec) {
        return Err(CheckpointError::Header(
            "parameter set does not match network spec".into(),
        ));
    }
    let spec_json = serde_json::to_vec(spec).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&PARAMS_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&FLATTEN_ORDER_VERSION.to_le_bytes())?;
    w.write_all(&spec.fingerprint().to_le_bytes())?;
    w.write_all(&(spec_json.len() as u32).to_le_bytes())?;
    w.write_all(&spec_json)?;
    let flat = params.flatten();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>, CheckpointError> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(CheckpointError::NonFinite(i));
    }
    Ok(values)
}

pub fn read_params<R: Read>(mut r: R) -> Result<(QNetworkSpec, ParamSet), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != PARAMS_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            what: "format",
            found: version,
            expected: PARAMS_FORMAT_VERSION,
        });
    }
    let order = read_u32(&mut r)?;
    if order != FLATTEN_ORDER_VERSION {
        return Err(CheckpointError::Version {
            what: "flattening order",
            found: order,
            expected: FLATTEN_ORDER_VERSION,
        });
    }
    let fingerprint = read_u64(&mut r)?;
    let spec_len = read_u32(&mut r)? as usize;
    if spec_len > 1 << 20 {
        return Err(CheckpointError::Header(format!("spec length {spec_len}")));
    }
    let mut spec_json = vec![0u8; spec_len];
    r.read_exact(&mut spec_json)?;
    let spec: QNetworkSpec =
        serde_json::from_slice(&spec_json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    spec.validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if spec.fingerprint() != fingerprint {
        return Err(CheckpointError::Fingerprint {
            found: fingerprint,
            expected: spec.fingerprint(),
        });
    }
    let count = read_u64(&mut r)? as usize;
    if count != spec.num_params() {
        return Err(CheckpointError::Header(format!(
            "{count} values for a network with {} parameters",
            spec.num_params()
        )));
    }
    let values = read_f64s(&mut r, count)?;
    let template = init_params(&spec, 0).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let params = template
        .unflatten_like(&values)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok((spec, params))
}
