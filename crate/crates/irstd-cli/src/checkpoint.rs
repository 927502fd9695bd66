//! Model checkpoints: a JSON header (architecture config + training
//! metadata) followed by named LRRT tensor blobs. Byte-stable for fixed
//! content.

use std::path::Path;

use anyhow::{bail, Context, Result};
use irstd_core::lrrt::{self, AnyTensor};
use irstd_core::net::{Model, ModelConfig};
use irstd_core::scalar::Scalar;
use serde::{Deserialize, Serialize};

use crate::atomic::write_atomic;

const MAGIC: &[u8; 4] = b"IRCK";
const VERSION: u8 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "f32" or "f64".
    pub precision: String,
    pub epoch: Option<usize>,
    pub val_iou: Option<f64>,
    pub train_seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
}

pub fn encode<E: Scalar>(model: &Model<E>, meta: &CheckpointMeta) -> Vec<u8> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let entries = model.named_params();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in &entries {
        let blob = lrrt::encode(tensor);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    out
}

pub struct DecodedCheckpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, AnyTensor)>,
}

pub fn decode(bytes: &[u8]) -> Result<DecodedCheckpoint> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*pos..*pos + n)
            .context("checkpoint: truncated")?;
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<usize> {
        let b = bytes
            .get(*pos..*pos + 4)
            .context("checkpoint: truncated length")?;
        *pos += 4;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    };

    if take(&mut pos, 4)? != MAGIC {
        bail!("checkpoint: bad magic");
    }
    if take(&mut pos, 1)?[0] != VERSION {
        bail!("checkpoint: unsupported version");
    }
    let header_len = read_u32(&mut pos)?;
    let header: CheckpointHeader =
        serde_json::from_slice(take(&mut pos, header_len)?).context("checkpoint: bad header")?;
    let n = read_u32(&mut pos)?;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = read_u32(&mut pos)?;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .context("checkpoint: bad entry name")?;
        let blob_len = read_u32(&mut pos)?;
        let tensor = lrrt::decode(take(&mut pos, blob_len)?)?;
        tensors.push((name, tensor));
    }
    if pos != bytes.len() {
        bail!("checkpoint: {} trailing bytes", bytes.len() - pos);
    }
    Ok(DecodedCheckpoint { header, tensors })
}

/// Rebuild a model of element type E, casting stored tensors if needed.
pub fn instantiate<E: Scalar>(decoded: &DecodedCheckpoint) -> Result<Model<E>> {
    let mut model = Model::<E>::build(decoded.header.config.clone())?;
    let entries: Vec<(String, irstd_core::tensor::Tensor<E>)> = decoded
        .tensors
        .iter()
        .map(|(n, t)| {
            let tensor = match t {
                AnyTensor::F32(t) => t.cast::<E>(),
                AnyTensor::F64(t) => t.cast::<E>(),
            };
            (n.clone(), tensor)
        })
        .collect();
    model.load_named_params(&entries)?;
    Ok(model)
}

pub fn save<E: Scalar>(path: &Path, model: &Model<E>, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(model, meta)).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> Result<DecodedCheckpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            precision: "f64".into(),
            epoch: Some(3),
            val_iou: Some(0.5),
            train_seed: Some(7),
        }
    }

    #[test]
    fn round_trip_restores_every_parameter() {
        let model = Model::<f64>::build(ModelConfig::tiny(5)).unwrap();
        let bytes = encode(&model, &meta());
        let decoded = decode(&bytes).unwrap();
        assert_eq!(decoded.header.config, model.config);
        let restored: Model<f64> = instantiate(&decoded).unwrap();
        for ((na, ta), (_, tb)) in model
            .named_params()
            .iter()
            .zip(restored.named_params().iter())
        {
            assert!(ta.bit_eq(tb), "parameter {na} altered by round trip");
        }
    }

    #[test]
    fn encoding_is_byte_stable() {
        let model = Model::<f32>::build(ModelConfig::tiny(9)).unwrap();
        let a = encode(&model, &meta());
        let b = encode(&model, &meta());
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let model = Model::<f32>::build(ModelConfig::tiny(1)).unwrap();
        let mut bytes = encode(&model, &meta());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
        let bytes = encode(&model, &meta());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
