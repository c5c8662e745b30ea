//! Model checkpoints: `ZTCK` magic, a big-endian `u32` header length, a JSON
//! header (model shape, layer layout, digest) and the canonical parameter
//! bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ztfed_core::model::Mas2sConfig;
use ztfed_core::{LayerSpec, ModelParams};

use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 4] = b"ZTCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: Mas2sConfig,
    pub layers: Vec<LayerSpec>,
    pub param_count: usize,
    pub digest: String,
}

pub fn encode(model: &Mas2sConfig, params: &ModelParams) -> Vec<u8> {
    let header = CheckpointHeader {
        model: *model,
        layers: params.specs().to_vec(),
        param_count: params.param_count(),
        digest: params.digest().to_hex(),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + params.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params.canonical_bytes());
    out
}

/// Parse a checkpoint and check its digest.
pub fn decode(bytes: &[u8]) -> AppResult<(CheckpointHeader, ModelParams)> {
    let bad = |m: &str| AppError::Runtime(format!("corrupt checkpoint: {m}"));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let n = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + n).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let params = ModelParams::from_canonical_bytes(header.layers.clone(), &bytes[8 + n..])?;
    if params.digest().to_hex() != header.digest {
        return Err(bad("digest mismatch"));
    }
    Ok((header, params))
}

pub fn save(path: &Path, model: &Mas2sConfig, params: &ModelParams) -> AppResult<()> {
    std::fs::write(path, encode(model, params)).map_err(AppError::path(path))
}

pub fn load(path: &Path) -> AppResult<(CheckpointHeader, ModelParams)> {
    decode(&std::fs::read(path).map_err(AppError::path(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ztfed_core::rng::derive_rng;

    #[test]
    fn round_trip_and_tamper() {
        let cfg = Mas2sConfig { hidden_size: 3, heads: 1, key_dim: 2, sequence_length: 4, ..Mas2sConfig::default() };
        let p = cfg.init_params(&mut derive_rng(1, "ck", 0)).unwrap();
        let bytes = encode(&cfg, &p);
        let (h, q) = decode(&bytes).unwrap();
        assert_eq!(h.model, cfg);
        assert_eq!(q.digest(), p.digest());
        let mut t = bytes.clone();
        *t.last_mut().unwrap() ^= 1;
        assert!(decode(&t).is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
