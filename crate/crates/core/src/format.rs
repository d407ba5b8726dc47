//! Two-part model file: a single-line JSON header, a newline, then the raw little-endian f32 blob.
//!
//! The header lists every config field, `tensor_order`, the per-tensor shapes, the blob length in
//! bytes and the CRC-32 of the blob. Tensor `k` starts at the byte offset equal to the summed sizes
//! of the tensors before it; all tensors are row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::weights::{tensor_order, tensor_shape, ModelWeights};

pub const FORMAT_NAME: &str = "tedecode-model";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER_BYTES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub config: ModelConfig,
    pub tensor_order: Vec<String>,
    pub tensor_shapes: Vec<Vec<usize>>,
    pub blob_bytes: u64,
    pub crc32: u32,
}

/// Serializes weights to bytes. Identical weights always produce identical bytes.
pub fn encode_model(weights: &ModelWeights) -> Result<Vec<u8>> {
    let tensors = weights.tensors();
    let n_floats: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut blob = Vec::with_capacity(n_floats * 4);
    for (_, t) in &tensors {
        for v in t.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let order = tensor_order(&weights.config);
    let shapes = order
        .iter()
        .map(|n| tensor_shape(&weights.config, n).expect("known tensor"))
        .collect();
    let header = ModelHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        config: weights.config.clone(),
        tensor_order: order,
        tensor_shapes: shapes,
        blob_bytes: blob.len() as u64,
        crc32: crc32fast::hash(&blob),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelWeights> {
    let nl = bytes
        .iter()
        .take(MAX_HEADER_BYTES)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Malformed("no header terminator found".into()))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Malformed(format!("header: {e}")))?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    header
        .config
        .validate()
        .map_err(|e| Error::Malformed(format!("header config: {e}")))?;
    let blob = &bytes[nl + 1..];
    if blob.len() as u64 != header.blob_bytes {
        return Err(Error::Malformed(format!(
            "blob is {} bytes, header says {}",
            blob.len(),
            header.blob_bytes
        )));
    }
    let actual = crc32fast::hash(blob);
    if actual != header.crc32 {
        return Err(Error::Checksum { expected: header.crc32, actual });
    }

    let cfg = &header.config;
    if header.tensor_order != tensor_order(cfg) {
        return Err(Error::Malformed("tensor_order does not match the config".into()));
    }
    if header.tensor_shapes.len() != header.tensor_order.len() {
        return Err(Error::Malformed("tensor_shapes length differs from tensor_order".into()));
    }
    for (name, shape) in header.tensor_order.iter().zip(&header.tensor_shapes) {
        if tensor_shape(cfg, name).as_ref() != Some(shape) {
            return Err(Error::DimensionMismatch(format!("tensor {name} has shape {shape:?}")));
        }
    }
    if blob.len() != cfg.param_count() * 4 {
        return Err(Error::DimensionMismatch(format!(
            "blob holds {} floats, config needs {}",
            blob.len() / 4,
            cfg.param_count()
        )));
    }

    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    ModelWeights::from_flat(cfg.clone(), |_, len| floats.by_ref().take(len).collect())
}

pub fn write_model(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(weights)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights() -> ModelWeights {
        ModelWeights::init_seeded(&ModelConfig::new(2, 2, 8, 16, 11, 12), 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let w = weights();
        let bytes = encode_model(&w).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back).unwrap(), bytes);
        assert_eq!(back, w);
    }

    #[test]
    fn corrupted_blob_fails_checksum() {
        let mut bytes = encode_model(&weights()).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncated_blob_is_malformed() {
        let bytes = encode_model(&weights()).unwrap();
        assert!(matches!(decode_model(&bytes[..bytes.len() - 4]), Err(Error::Malformed(_))));
        assert!(matches!(decode_model(b"{\"format\": 1}"), Err(Error::Malformed(_))));
    }

    #[test]
    fn header_is_single_json_line() {
        let bytes = encode_model(&weights()).unwrap();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(v["n_layers"], 2);
        assert_eq!(v["tensor_order"][0], "token_embedding");
        assert!(v["crc32"].is_u64());
    }
}
