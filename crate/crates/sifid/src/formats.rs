//! Binary feature, checkpoint and NIQE model files.
//!
//! All three share a layout: an 8-byte magic, a little-endian `u32` version,
//! then a payload. Numbers are little-endian throughout.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sifid_core::baselines::{NiqeConfig, NiqeModel};
use sifid_core::linalg::Matrix;
use sifid_core::trainer::TrainConfig;
use sifid_core::{Encoder, EncoderConfig, FeatureSet, NoiseSpec};

use crate::io::{self, IoError};

pub const FEATURE_MAGIC: &[u8; 8] = b"SIFIDFT\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SIFIDCK\0";
pub const NIQE_MAGIC: &[u8; 8] = b"SIFIDNQ\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: not a {0} file")]
    BadMagic(&'static str),
    #[error("unsupported {kind} version {found}")]
    Version { kind: &'static str, found: u32 },
    #[error("file ends early")]
    Truncated,
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.buf.len() < n {
            return Err(FormatError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 8], kind: &'static str) -> Result<(), FormatError> {
        if self.buf.len() < 8 || &self.buf[..8] != magic {
            return Err(FormatError::BadMagic(kind));
        }
        self.take(8)?;
        let found = self.u32()?;
        if found != FORMAT_VERSION {
            return Err(FormatError::Version { kind, found });
        }
        Ok(())
    }

    fn json<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T, FormatError> {
        let n = self.u32()? as usize;
        serde_json::from_slice(self.take(n)?).map_err(|e| FormatError::Metadata(e.to_string()))
    }

    fn finish(self) -> Result<(), FormatError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn header(out: &mut Vec<u8>, magic: &[u8; 8]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn put_json<T: Serialize>(out: &mut Vec<u8>, value: &T) {
    let bytes = serde_json::to_vec(value).expect("metadata serialises");
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&bytes);
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// `d`, `N`, then `N·d` float32 values, row by row.
pub fn encode_features(features: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * features.data().len());
    header(&mut out, FEATURE_MAGIC);
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(features.len() as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet, FormatError> {
    let mut r = Reader { buf: bytes };
    r.header(FEATURE_MAGIC, "feature")?;
    let d = r.u32()? as usize;
    let n = r.u32()? as usize;
    let raw = r.take(d.checked_mul(n).and_then(|k| k.checked_mul(4)).ok_or(FormatError::Truncated)?)?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    r.finish()?;
    FeatureSet::from_flat(d, data).map_err(|e| FormatError::Metadata(e.to_string()))
}

pub fn save_features(features: &FeatureSet, path: &Path) -> Result<(), FormatError> {
    Ok(io::write_bytes(path, &encode_features(features))?)
}

pub fn load_features(path: &Path) -> Result<FeatureSet, FormatError> {
    decode_features(&io::read_file(path)?)
}

/// What a checkpoint records besides the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub encoder: EncoderConfig,
    /// `None` for the untrained encoder.
    pub noise: Option<NoiseSpec>,
    /// 0 for the untrained encoder.
    pub epoch: usize,
    pub seed: u64,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub encoder: Encoder,
}

pub fn encode_checkpoint(meta: &CheckpointMeta, encoder: &Encoder) -> Vec<u8> {
    let params = encoder.params();
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    header(&mut out, CHECKPOINT_MAGIC);
    put_json(&mut out, meta);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    put_f64s(&mut out, params);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader { buf: bytes };
    r.header(CHECKPOINT_MAGIC, "checkpoint")?;
    let meta: CheckpointMeta = r.json()?;
    let n = r.u64()? as usize;
    let params = r.f64s(n)?;
    r.finish()?;
    let encoder = Encoder::from_params(meta.encoder.clone(), params).map_err(|e| FormatError::Metadata(e.to_string()))?;
    Ok(Checkpoint { meta, encoder })
}

pub fn save_checkpoint(meta: &CheckpointMeta, encoder: &Encoder, path: &Path) -> Result<(), FormatError> {
    Ok(io::write_bytes(path, &encode_checkpoint(meta, encoder))?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    decode_checkpoint(&io::read_file(path)?)
}

/// `{noise_tag}_{epoch:03}.ckpt`.
pub fn checkpoint_name(noise: &NoiseSpec, epoch: usize) -> String {
    format!("{}_{epoch:03}.ckpt", noise.tag())
}

pub const INITIAL_CHECKPOINT: &str = "initial.ckpt";

pub fn encode_niqe(model: &NiqeModel) -> Vec<u8> {
    let d = model.mean.len();
    let mut out = Vec::with_capacity(64 + 8 * d * (d + 1));
    header(&mut out, NIQE_MAGIC);
    put_json(&mut out, &model.config);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    put_f64s(&mut out, &model.mean);
    put_f64s(&mut out, model.cov.data());
    out
}

pub fn decode_niqe(bytes: &[u8]) -> Result<NiqeModel, FormatError> {
    let mut r = Reader { buf: bytes };
    r.header(NIQE_MAGIC, "NIQE model")?;
    let config: NiqeConfig = r.json()?;
    let d = r.u32()? as usize;
    let mean = r.f64s(d)?;
    let cov = r.f64s(d * d)?;
    r.finish()?;
    let cov = Matrix::from_vec(d, d, cov).map_err(|e| FormatError::Metadata(e.to_string()))?;
    Ok(NiqeModel { config, mean, cov })
}

pub fn save_niqe(model: &NiqeModel, path: &Path) -> Result<(), FormatError> {
    Ok(io::write_bytes(path, &encode_niqe(model))?)
}

pub fn load_niqe(path: &Path) -> Result<NiqeModel, FormatError> {
    decode_niqe(&io::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sifid_core::encoder::init_encoder;

    #[test]
    fn feature_layout() {
        let f = FeatureSet::from_rows(2, &[vec![1.0, 2.0], vec![3.0, 4.5]]).unwrap();
        let bytes = encode_features(&f);
        assert_eq!(&bytes[..8], FEATURE_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 20 + 4 * 4);
        assert_eq!(decode_features(&bytes).unwrap(), f);
        assert!(matches!(decode_features(&bytes[..bytes.len() - 1]), Err(FormatError::Truncated)));
        assert!(matches!(decode_features(b"nonsense-bytes"), Err(FormatError::BadMagic(_))));
    }

    #[test]
    fn checkpoint_keeps_parameters_exactly() {
        let enc = init_encoder(&EncoderConfig::default()).unwrap();
        let meta = CheckpointMeta {
            encoder: EncoderConfig::default(),
            noise: Some(sifid_core::augment::CATALOG[7]),
            epoch: 3,
            seed: 9,
            train: None,
        };
        let back = decode_checkpoint(&encode_checkpoint(&meta, &enc)).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.encoder.params(), enc.params());
        let mut bytes = encode_checkpoint(&meta, &enc);
        bytes[8] = 2;
        assert!(matches!(decode_checkpoint(&bytes), Err(FormatError::Version { found: 2, .. })));
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(&sifid_core::augment::CATALOG[7], 5), "colorjitter_b0.5_h0.3_005.ckpt");
    }

    #[test]
    fn niqe_model_file() {
        let model = NiqeModel {
            config: NiqeConfig::default(),
            mean: vec![0.5, -1.0],
            cov: Matrix::from_rows(&[&[2.0, 0.1], &[0.1, 3.0]]).unwrap(),
        };
        assert_eq!(decode_niqe(&encode_niqe(&model)).unwrap(), model);
    }
}
