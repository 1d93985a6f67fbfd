use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::{Duration, Instant};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::CodecError;

/// Parameters passed to a baseline codec, e.g. `level = "6"`.
pub type CodecParams = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaselineDescriptor {
    pub name: String,
    pub lossy: bool,
    pub params: CodecParams,
}

/// A general-purpose compressor used as a reference point for the model
/// codec.
pub trait BaselineCodec: Send + Sync {
    fn descriptor(&self) -> BaselineDescriptor;
    fn compress(&self, input: &[u8], params: &CodecParams) -> Result<Vec<u8>, CodecError>;
    fn decompress(&self, input: &[u8], params: &CodecParams) -> Result<Vec<u8>, CodecError>;
}

/// Output of [`CodecRegistry::run`].
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub name: String,
    pub original_bytes: usize,
    pub compressed_bytes: usize,
    pub lossless_verified: bool,
    pub compress_time: Duration,
    pub decompress_time: Duration,
}

impl BaselineRun {
    pub fn ratio(&self) -> f64 {
        self.original_bytes as f64 / self.compressed_bytes.max(1) as f64
    }
}

/// Stores bytes unchanged.
#[derive(Debug, Default)]
pub struct IdentityCodec;

impl BaselineCodec for IdentityCodec {
    fn descriptor(&self) -> BaselineDescriptor {
        BaselineDescriptor {
            name: "raw".into(),
            lossy: false,
            params: CodecParams::new(),
        }
    }

    fn compress(&self, input: &[u8], _: &CodecParams) -> Result<Vec<u8>, CodecError> {
        Ok(input.to_vec())
    }

    fn decompress(&self, input: &[u8], _: &CodecParams) -> Result<Vec<u8>, CodecError> {
        Ok(input.to_vec())
    }
}

fn level(name: &str, params: &CodecParams) -> Result<Compression, CodecError> {
    match params.get("level") {
        None => Ok(Compression::default()),
        Some(v) => match v.parse::<u32>() {
            Ok(l) if l <= 9 => Ok(Compression::new(l)),
            _ => Err(CodecError::Backend {
                name: name.into(),
                message: format!("level must be 0..=9, got '{v}'"),
            }),
        },
    }
}

fn deflate(name: &str, input: &[u8], params: &CodecParams) -> Result<Vec<u8>, CodecError> {
    let backend = |e: std::io::Error| CodecError::Backend {
        name: name.into(),
        message: e.to_string(),
    };
    let mut enc = DeflateEncoder::new(Vec::new(), level(name, params)?);
    enc.write_all(input).map_err(backend)?;
    enc.finish().map_err(backend)
}

fn inflate(name: &str, input: &[u8]) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    DeflateDecoder::new(input)
        .read_to_end(&mut out)
        .map_err(|e| CodecError::Backend {
            name: name.into(),
            message: e.to_string(),
        })?;
    Ok(out)
}

/// Raw DEFLATE (flate2).
#[derive(Debug, Default)]
pub struct DeflateCodec;

impl BaselineCodec for DeflateCodec {
    fn descriptor(&self) -> BaselineDescriptor {
        BaselineDescriptor {
            name: "deflate".into(),
            lossy: false,
            params: [("level".to_string(), "6".to_string())].into(),
        }
    }

    fn compress(&self, input: &[u8], params: &CodecParams) -> Result<Vec<u8>, CodecError> {
        deflate("deflate", input, params)
    }

    fn decompress(&self, input: &[u8], _: &CodecParams) -> Result<Vec<u8>, CodecError> {
        inflate("deflate", input)
    }
}

/// Byte-plane shuffle of 8-byte words followed by DEFLATE. Grouping the
/// exponent bytes together helps on float arrays.
#[derive(Debug, Default)]
pub struct ShuffleDeflateCodec;

fn shuffle(input: &[u8]) -> Vec<u8> {
    let words = input.len() / 8;
    let mut out = Vec::with_capacity(input.len());
    for b in 0..8 {
        out.extend((0..words).map(|w| input[w * 8 + b]));
    }
    out.extend_from_slice(&input[words * 8..]);
    out
}

fn unshuffle(input: &[u8]) -> Vec<u8> {
    let words = input.len() / 8;
    let mut out = vec![0u8; input.len()];
    for b in 0..8 {
        for w in 0..words {
            out[w * 8 + b] = input[b * words + w];
        }
    }
    out[words * 8..].copy_from_slice(&input[words * 8..]);
    out
}

impl BaselineCodec for ShuffleDeflateCodec {
    fn descriptor(&self) -> BaselineDescriptor {
        BaselineDescriptor {
            name: "shuffle-deflate".into(),
            lossy: false,
            params: [("level".to_string(), "6".to_string())].into(),
        }
    }

    fn compress(&self, input: &[u8], params: &CodecParams) -> Result<Vec<u8>, CodecError> {
        deflate("shuffle-deflate", &shuffle(input), params)
    }

    fn decompress(&self, input: &[u8], _: &CodecParams) -> Result<Vec<u8>, CodecError> {
        Ok(unshuffle(&inflate("shuffle-deflate", input)?))
    }
}

/// Named collection of baseline codecs, iterated in name order.
#[derive(Default)]
pub struct CodecRegistry {
    codecs: BTreeMap<String, Box<dyn BaselineCodec>>,
}

impl CodecRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `raw`, `deflate` and `shuffle-deflate`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(Box::new(IdentityCodec)).unwrap();
        r.register(Box::new(DeflateCodec)).unwrap();
        r.register(Box::new(ShuffleDeflateCodec)).unwrap();
        r
    }

    pub fn register(&mut self, codec: Box<dyn BaselineCodec>) -> Result<(), CodecError> {
        let name = codec.descriptor().name;
        if self.codecs.contains_key(&name) {
            return Err(CodecError::DuplicateCodec(name));
        }
        self.codecs.insert(name, codec);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.codecs.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn BaselineCodec, CodecError> {
        self.codecs
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| CodecError::UnknownCodec {
                name: name.into(),
                registered: self.names().join(", "),
            })
    }

    /// Compresses, decompresses and checks the round trip.
    pub fn run(&self, name: &str, input: &[u8], params: &CodecParams) -> Result<BaselineRun, CodecError> {
        let codec = self.get(name)?;
        let start = Instant::now();
        let packed = codec.compress(input, params)?;
        let compress_time = start.elapsed();
        let start = Instant::now();
        let back = codec.decompress(&packed, params)?;
        let decompress_time = start.elapsed();
        Ok(BaselineRun {
            name: name.into(),
            original_bytes: input.len(),
            compressed_bytes: packed.len(),
            lossless_verified: back == input,
            compress_time,
            decompress_time,
        })
    }
}
