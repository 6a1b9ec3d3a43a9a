//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, UTF-8 JSON
//! header, then every tensor's data as little-endian `f64` in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::geometry::NormalizationParams;
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"SHAPECK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model plus what inference needs to map results back to mm.
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Option<NormalizationParams>,
    /// Free-form metadata (training config, best epoch, ...).
    pub extras: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    init: String,
    normalization: Option<NormalizationParams>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    extras: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let params = ckpt.model.params();
    let header = Header {
        model: ckpt.model.config().clone(),
        init: params.init.clone(),
        normalization: ckpt.normalization,
        tensors: params
            .names()
            .iter()
            .zip(params.values())
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                rows: v.rows(),
                cols: v.cols(),
            })
            .collect(),
        extras: ckpt.extras.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(24 + json.len() + 8 * params.total_size());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in params.values() {
        for x in v.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let mut data = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.rows * t.cols;
        if data.len() < 8 * n {
            return Err(bad(&format!("truncated tensor '{}'", t.name)));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        data = &data[8 * n..];
        tensors.push((t.name.clone(), Mat::from_vec(t.rows, t.cols, values)));
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensors"));
    }
    let mut model = Model::from_tensors(header.model, tensors)?;
    model.params_mut().init = header.init;
    Ok(Checkpoint {
        model,
        normalization: header.normalization,
        extras: header.extras,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderKind, HeadKind};

    #[test]
    fn roundtrip_is_bit_identical() {
        let cfg = ModelConfig {
            encoder: EncoderKind::Pointnet,
            head: HeadKind::Attn,
            n_input: 8,
            m_output: 6,
            feature_dim: 4,
            hidden_dim: 4,
            sfa_blocks: 1,
            attention_heads: 2,
            seed: 11,
            ..ModelConfig::default()
        };
        let ckpt = Checkpoint {
            model: Model::new(cfg).unwrap(),
            normalization: Some(NormalizationParams {
                center: [1.0, 2.0, 3.0],
                scale: 0.01,
            }),
            extras: serde_json::json!({"best_epoch": 4}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.model.params(), ckpt.model.params());
        assert_eq!(back.model.config(), ckpt.model.config());
        assert_eq!(back.normalization, ckpt.normalization);
        assert_eq!(back.extras["best_epoch"], 4);

        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        fs::write(&path, b"garbage garbage garbage").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
