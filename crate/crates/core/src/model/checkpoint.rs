//! Binary checkpoint format.
//!
//! ```text
//! "FCMF"  u16 version
//! u32 config length, config as `key=value` lines
//! per tensor, in parameter order:
//!     u32 name length, name bytes, u32 rank, rank × u32 extents,
//!     numel × f32 values
//! ```
//! All integers and floats are little-endian.

use super::{FcmFormer, ModelConfig, ModelError, ModelParams, Readout};
use crate::params::ParamTree;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"FCMF";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("incompatible checkpoint: format version {found}, this build reads {FORMAT_VERSION}")]
    Version { found: u16 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// `key=value` lines describing a model config. Also used by run manifests.
pub fn config_lines(cfg: &ModelConfig) -> String {
    let cap = cfg.subsample_cap.map_or("none".to_string(), |c| c.to_string());
    format!(
        "n_features={}\nd={}\nm={}\nheads={}\nn_layers={}\nn_classes={}\nreadout={}\nsubsample_cap={}\nseed={}\n",
        cfg.n_features, cfg.d, cfg.m, cfg.heads, cfg.n_layers, cfg.n_classes, cfg.readout, cap, cfg.seed
    )
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let bad = |k: &str, v: &str| CheckpointError::Config(format!("bad value {v:?} for {k}"));
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CheckpointError::Config(format!("malformed line {line:?}")))?;
        let int = || v.parse::<usize>().map_err(|_| bad(k, v));
        match k {
            "n_features" => cfg.n_features = int()?,
            "d" => cfg.d = int()?,
            "m" => cfg.m = int()?,
            "heads" => cfg.heads = int()?,
            "n_layers" => cfg.n_layers = int()?,
            "n_classes" => cfg.n_classes = int()?,
            "readout" => cfg.readout = v.parse::<Readout>().map_err(CheckpointError::Config)?,
            "subsample_cap" => cfg.subsample_cap = if v == "none" { None } else { Some(int()?) },
            "seed" => cfg.seed = v.parse().map_err(|_| bad(k, v))?,
            _ => return Err(CheckpointError::Config(format!("unknown key {k:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode<T: Scalar>(model: &FcmFormer<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = config_lines(model.config());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    model.params().for_each("", &mut |name, t| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    });
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated { offset: self.bytes.len() }),
        }
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<FcmFormer<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| CheckpointError::Config("config block is not UTF-8".into()))?;
    let config = parse_config(text)?;

    let mut params = ModelParams::<Tensor<T>>::init(&config)?;
    let mut failure = None;
    params.for_each_mut("", &mut |expected, slot| {
        if failure.is_some() {
            return;
        }
        if let Err(e) = read_tensor(&mut r, expected, slot) {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Incompatible(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(FcmFormer::from_params(config, params)?)
}

fn read_tensor<T: Scalar>(r: &mut Reader<'_>, expected: &str, slot: &mut Tensor<T>) -> Result<()> {
    let n = r.u32()?;
    let name = String::from_utf8_lossy(r.take(n)?).into_owned();
    if name != expected {
        return Err(CheckpointError::Incompatible(format!("expected tensor {expected}, found {name}")));
    }
    let rank = r.u32()?;
    let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if shape != slot.shape() {
        return Err(CheckpointError::Incompatible(format!(
            "{name}: shape {shape:?}, config implies {:?}",
            slot.shape()
        )));
    }
    let raw = r.take(slot.numel() * 4)?;
    for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
        *dst = T::widen_f32(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(())
}

pub fn save<T: Scalar>(path: &Path, model: &FcmFormer<T>) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<FcmFormer<T>> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_features: 5,
            d: 8,
            m: 4,
            heads: 2,
            n_layers: 2,
            n_classes: 3,
            readout: Readout::CrossAttention,
            subsample_cap: Some(500),
            seed: 4,
        }
    }

    #[test]
    fn roundtrip_is_exact_for_f32() {
        let m = FcmFormer::<f32>::new(tiny()).unwrap();
        let back: FcmFormer<f32> = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let m = FcmFormer::<f32>::new(tiny()).unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], b"FCMF");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), FORMAT_VERSION);
        let len = u32::from_le_bytes(b[6..10].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&b[10..10 + len]).unwrap();
        assert!(text.contains("readout=cross_attention\n"));
        let name_len = u32::from_le_bytes(b[10 + len..14 + len].try_into().unwrap()) as usize;
        assert_eq!(&b[14 + len..14 + len + name_len], b"input_proj.weight");
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let mut b = encode(&FcmFormer::<f32>::new(tiny()).unwrap());
        b[4] = 9;
        assert!(matches!(decode::<f32>(&b), Err(CheckpointError::Version { found: 9 })));
    }

    #[test]
    fn truncation_and_magic() {
        let b = encode(&FcmFormer::<f32>::new(tiny()).unwrap());
        assert!(matches!(decode::<f32>(&b[..b.len() - 3]), Err(CheckpointError::Truncated { .. })));
        assert!(matches!(decode::<f32>(b"NOPE"), Err(CheckpointError::Magic)));
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(matches!(parse_config("d=8\nwidth=3\n"), Err(CheckpointError::Config(_))));
    }
}
