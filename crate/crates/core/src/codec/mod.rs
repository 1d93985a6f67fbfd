//! On-disk formats and the baseline-compressor interface.
//!
//! * `.gmmc`: binary mixture model (header + CRC + fixed-size payload).
//! * `.gmm.json`: the same information as JSON.
//! * `.h2d` + `.h2d.json`: raw row-major histogram or pdf grid with a JSON
//!   sidecar.
//! * `.vdfp`: raw particle velocities.
//!
//! All multi-byte values are little-endian; floats are IEEE-754 binary64.
//! Byte layouts are documented in `docs/FORMATS.md`.

mod baseline;
mod grid;
mod model;
mod particles;

use thiserror::Error;

pub use baseline::{
    BaselineCodec, BaselineDescriptor, BaselineRun, CodecParams, CodecRegistry, DeflateCodec, IdentityCodec, ShuffleDeflateCodec,
};
pub use grid::{decode_histogram, decode_pdf, encode_histogram, encode_pdf, GridContent, GridSidecar};
pub use model::{
    decode_model, decode_model_json, encode_model, encode_model_json, model_payload_len, ModelDocument, ModelMeta,
    FORMAT_VERSION, MODEL_MAGIC,
};
pub use particles::{decode_particles, encode_particles, raw_particle_bytes, PARTICLE_MAGIC};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("header checksum mismatch")]
    HeaderChecksum,
    #[error("component {component}: covariance is not symmetric positive definite")]
    NonSpdCovariance { component: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("size mismatch: header says {expected} bytes, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("json: {0}")]
    Json(String),
    #[error("unknown codec '{name}'; registered codecs: {registered}")]
    UnknownCodec { name: String, registered: String },
    #[error("codec '{0}' is already registered")]
    DuplicateCodec(String),
    #[error("codec '{name}' failed: {message}")]
    Backend { name: String, message: String },
}

/// Little-endian cursor over a byte slice with truncation checks.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CodecError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CodecError::InvalidField("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
