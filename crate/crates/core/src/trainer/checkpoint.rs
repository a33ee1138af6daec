//! Checkpoint file: `N2NCKPT1`, u32 LE header length, JSON header, then the
//! parameters as f64 LE.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{ModelSpec, Regime};
use crate::error::{Error, Result};
use crate::kspace::Shape;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"N2NCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub regime: Regime,
    pub model: ModelSpec,
    pub shape: Shape,
    pub r: f64,
    pub r_tilde: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub epochs: usize,
    pub num_params: usize,
    pub config_hash: String,
}

pub fn write_checkpoint<W: Write>(mut out: W, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    if header.num_params != params.len() {
        return Err(Error::shape(header.num_params, params.len()));
    }
    let json = serde_json::to_vec(header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("checkpoint header too large".into()))?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(8 * params.len());
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    input
        .read_exact(&mut len)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input
        .read_exact(&mut json)
        .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != 8 * header.num_params {
        return Err(Error::Format(format!(
            "expected {} parameter bytes, found {}",
            8 * header.num_params,
            body.len()
        )));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    Ok((header, params))
}
