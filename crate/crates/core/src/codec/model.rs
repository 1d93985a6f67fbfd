use serde::{Deserialize, Serialize};

use super::{put_f64s, CodecError, Reader};
use crate::histogram::{AxisRange, Plane};
use crate::linalg::{packed_len, SymMatrix};
use crate::wgmm::{AffineMap, FitError, GaussianComponent, GmmModel};

pub const MODEL_MAGIC: [u8; 4] = *b"GMMC";
pub const FORMAT_VERSION: u8 = 1;

const FLAG_RANGES: u8 = 0b0000_0001;
const NO_PLANE: u8 = 0xFF;

/// Metadata carried in the model header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub plane: Option<Plane>,
    /// Empty, or one range per model dimension.
    pub axis_ranges: Vec<AxisRange>,
    pub species: String,
    /// Simulation or analysis cycle the model belongs to.
    pub cycle: u64,
}

/// Payload size in bytes: `M (1 + d + d(d+1)/2) * 8`.
pub fn model_payload_len(components: usize, dim: usize) -> usize {
    components * (1 + dim + packed_len(dim)) * 8
}

fn check_meta(model: &GmmModel, meta: &ModelMeta) -> Result<(), CodecError> {
    if !meta.axis_ranges.is_empty() && meta.axis_ranges.len() != model.dimension() {
        return Err(CodecError::InvalidField(format!(
            "{} axis ranges for a {}-dimensional model",
            meta.axis_ranges.len(),
            model.dimension()
        )));
    }
    if meta.species.len() > u16::MAX as usize {
        return Err(CodecError::InvalidField("species label too long".into()));
    }
    Ok(())
}

/// Binary `.gmmc` encoding; see `docs/FORMATS.md`.
pub fn encode_model(model: &GmmModel, meta: &ModelMeta) -> Result<Vec<u8>, CodecError> {
    check_meta(model, meta)?;
    let d = model.dimension();
    let mut out = Vec::with_capacity(64 + model_payload_len(model.len(), d));
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(d as u8);
    out.push(meta.plane.map_or(NO_PLANE, Plane::code));
    out.push(if meta.axis_ranges.is_empty() { 0 } else { FLAG_RANGES });
    out.extend_from_slice(&(model.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta.cycle.to_le_bytes());
    out.extend_from_slice(&(meta.species.len() as u16).to_le_bytes());
    out.extend_from_slice(meta.species.as_bytes());
    for r in &meta.axis_ranges {
        put_f64s(&mut out, &[r.min, r.max]);
    }
    let map = model.normalization();
    for a in 0..d {
        put_f64s(&mut out, &[map.scale[a], map.offset[a]]);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    for c in model.components() {
        put_f64s(&mut out, &[c.weight]);
        put_f64s(&mut out, &c.mean);
        put_f64s(&mut out, c.covariance.packed());
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<(GmmModel, ModelMeta), CodecError> {
    let mut r = Reader::new(bytes);
    if r.take(4).map_err(|_| CodecError::BadMagic)? != MODEL_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let d = r.u8()? as usize;
    if !(1..=8).contains(&d) {
        return Err(CodecError::InvalidField(format!("dimension {d}")));
    }
    let plane = match r.u8()? {
        NO_PLANE => None,
        code => Some(Plane::from_code(code).ok_or_else(|| CodecError::InvalidField(format!("plane code {code}")))?),
    };
    let flags = r.u8()?;
    let m = r.u32()? as usize;
    let cycle = r.u64()?;
    let label_len = r.u16()? as usize;
    let species = String::from_utf8(r.take(label_len)?.to_vec())
        .map_err(|_| CodecError::InvalidField("species label is not UTF-8".into()))?;
    let mut axis_ranges = Vec::new();
    if flags & FLAG_RANGES != 0 {
        for _ in 0..d {
            let (min, max) = (r.f64()?, r.f64()?);
            axis_ranges.push(AxisRange { min, max });
        }
    }
    let mut scale = Vec::with_capacity(d);
    let mut offset = Vec::with_capacity(d);
    for _ in 0..d {
        scale.push(r.f64()?);
        offset.push(r.f64()?);
    }
    let header_end = r.pos();
    let crc = r.u32()?;
    if crc != crc32fast::hash(&bytes[..header_end]) {
        return Err(CodecError::HeaderChecksum);
    }

    let payload = model_payload_len(m, d);
    if r.remaining() < payload {
        return Err(CodecError::Truncated {
            needed: r.pos() + payload,
            available: bytes.len(),
        });
    }
    if r.remaining() > payload {
        return Err(CodecError::TrailingBytes(r.remaining() - payload));
    }
    let p = packed_len(d);
    let mut components = Vec::with_capacity(m);
    for _ in 0..m {
        let weight = r.f64()?;
        let mean = r.f64s(d)?;
        let covariance = SymMatrix::from_packed(d, r.f64s(p)?).expect("packed length");
        components.push(GaussianComponent {
            weight,
            mean,
            covariance,
        });
    }
    let model = GmmModel::new(components, AffineMap { scale, offset }).map_err(|e| match e {
        FitError::NotSpd { component } => CodecError::NonSpdCovariance { component },
        other => CodecError::InvalidModel(other.to_string()),
    })?;
    Ok((
        model,
        ModelMeta {
            plane,
            axis_ranges,
            species,
            cycle,
        },
    ))
}

/// JSON rendering of a model with its metadata (`.gmm.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u8,
    pub dimension: usize,
    pub plane: Option<Plane>,
    pub axis_ranges: Vec<[f64; 2]>,
    pub species: String,
    pub cycle: u64,
    pub normalization: AffineMap,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Packed upper triangle, row-major.
    pub covariance_upper: Vec<f64>,
}

pub fn encode_model_json(model: &GmmModel, meta: &ModelMeta) -> Result<String, CodecError> {
    check_meta(model, meta)?;
    let doc = ModelDocument {
        format: "gmm-json".into(),
        version: FORMAT_VERSION,
        dimension: model.dimension(),
        plane: meta.plane,
        axis_ranges: meta.axis_ranges.iter().map(|r| [r.min, r.max]).collect(),
        species: meta.species.clone(),
        cycle: meta.cycle,
        normalization: model.normalization().clone(),
        components: model
            .components()
            .iter()
            .map(|c| ComponentDocument {
                weight: c.weight,
                mean: c.mean.clone(),
                covariance_upper: c.covariance.packed().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| CodecError::Json(e.to_string()))
}

pub fn decode_model_json(text: &str) -> Result<(GmmModel, ModelMeta), CodecError> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| CodecError::Json(e.to_string()))?;
    if doc.version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(doc.version));
    }
    let d = doc.dimension;
    let mut components = Vec::with_capacity(doc.components.len());
    for (i, c) in doc.components.into_iter().enumerate() {
        let covariance = SymMatrix::from_packed(d, c.covariance_upper)
            .ok_or_else(|| CodecError::InvalidField(format!("component {i}: covariance length")))?;
        if c.mean.len() != d {
            return Err(CodecError::InvalidField(format!("component {i}: mean length")));
        }
        components.push(GaussianComponent {
            weight: c.weight,
            mean: c.mean,
            covariance,
        });
    }
    if doc.normalization.dim() != d {
        return Err(CodecError::InvalidField("normalization dimension".into()));
    }
    let model = GmmModel::new(components, doc.normalization).map_err(|e| match e {
        FitError::NotSpd { component } => CodecError::NonSpdCovariance { component },
        other => CodecError::InvalidModel(other.to_string()),
    })?;
    let meta = ModelMeta {
        plane: doc.plane,
        axis_ranges: doc
            .axis_ranges
            .into_iter()
            .map(|[min, max]| AxisRange { min, max })
            .collect(),
        species: doc.species,
        cycle: doc.cycle,
    };
    Ok((model, meta))
}
