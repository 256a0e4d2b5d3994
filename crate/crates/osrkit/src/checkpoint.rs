//! Binary model checkpoints.
//!
//! ```text
//! "ATNB"                  4 bytes magic
//! version                 u32 LE (currently 1)
//! layer count             u32 LE
//! per layer:
//!   rows, cols            u32 LE each (rows = outputs, cols = inputs)
//!   weights               rows·cols f64 LE, row-major
//!   bias                  rows f64 LE
//! trailer                 UTF-8 JSON object, to end of file
//! ```
//!
//! The trailer carries the architecture and provenance ([`CheckpointMeta`]).
//! Loading recomputes the parameter digest and rejects a mismatch.

use std::path::Path;

use osrkit_core::nn::{DenseNetSpec, Layer, ModelParams};
use osrkit_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ATNB";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: DenseNetSpec,
    /// `well`, `bad` or `gan-generator`.
    pub regime_label: String,
    pub seed: u64,
    pub params_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    /// Classifiers only: training examples seen.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub examples_used: Option<usize>,
    /// Generators only: digest of the anchor image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_digest: Option<String>,
    /// Generators only: logit bound used in training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl CheckpointMeta {
    pub fn new(params: &ModelParams, regime_label: &str, seed: u64) -> Self {
        Self {
            spec: params.spec().clone(),
            regime_label: regime_label.to_string(),
            seed,
            params_digest: params.digest(),
            train_accuracy: None,
            test_accuracy: None,
            examples_used: None,
            anchor_digest: None,
            delta: None,
        }
    }
}

pub fn encode(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + params.parameter_count() * 8 + 512);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.layers().len() as u32).to_le_bytes());
    for layer in params.layers() {
        let shape = layer.weight.shape();
        out.extend_from_slice(&(shape[0] as u32).to_le_bytes());
        out.extend_from_slice(&(shape[1] as u32).to_le_bytes());
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&serde_json::to_vec(meta)?);
    Ok(out)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated: need {n} more bytes"))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let mut c = Cursor {
        path,
        bytes,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        c.pos = 0;
        return Err(c.err("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(c.err(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let weight = c.f64s(rows * cols)?;
        let bias = c.f64s(rows)?;
        layers.push(Layer {
            weight: Tensor::matrix(rows, cols, weight)?,
            bias: Tensor::vector(bias),
        });
    }
    let trailer_at = c.pos;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[trailer_at..]).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: trailer_at as u64,
            message: format!("trailer: {e}"),
        })?;
    let params = ModelParams::from_layers(meta.spec.clone(), layers)?;
    if params.digest() != meta.params_digest {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: trailer_at as u64,
            message: "parameter digest does not match the trailer".into(),
        });
    }
    Ok((params, meta))
}

pub fn save(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(params, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use osrkit_core::RngState;

    fn model() -> ModelParams {
        ModelParams::init(
            DenseNetSpec::classifier(vec![3, 4, 2]),
            &mut RngState::new(5),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut meta = CheckpointMeta::new(&m, "well", 5);
        meta.test_accuracy = Some(0.5);
        let bytes = encode(&m, &meta).unwrap();
        let (back, back_meta) = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn header_layout() {
        let m = model();
        let bytes = encode(&m, &CheckpointMeta::new(&m, "bad", 0)).unwrap();
        assert_eq!(&bytes[..4], b"ATNB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        let w0 = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(w0, m.layers()[0].weight.data()[0]);
    }

    #[test]
    fn corruption_detected() {
        let m = model();
        let mut bytes = encode(&m, &CheckpointMeta::new(&m, "well", 0)).unwrap();
        assert!(decode(&bytes[..30], Path::new("t")).is_err());
        bytes[20] ^= 1;
        let err = decode(&bytes, Path::new("t")).unwrap_err().to_string();
        assert!(err.contains("digest"), "{err}");
        assert!(decode(b"NOPE", Path::new("t")).is_err());
    }
}
