use serde::{Deserialize, Serialize};

use super::{put_f64s, CodecError};
use crate::histogram::{AxisRange, Histogram2D, Plane};
use crate::metrics::PdfGrid;

/// What the grid values are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridContent {
    /// Summed particle weights per bin.
    Counts,
    /// Probability density per bin (integrates to one).
    Density,
}

/// `.h2d.json` sidecar describing a raw `.h2d` grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub format: String,
    pub version: u8,
    pub content: GridContent,
    pub plane: Option<Plane>,
    pub n_bins: usize,
    /// `[[u_min, u_max], [v_min, v_max]]` for the plane's two axes.
    pub axis_ranges: [[f64; 2]; 2],
    /// Total weight of particles outside the range (counts only).
    pub out_of_range: f64,
    /// Always `"f64-le"`.
    pub dtype: String,
    /// Always `"row-major"`: index `i * n_bins + j`, `i` along the first axis.
    pub order: String,
}

impl GridSidecar {
    fn new(content: GridContent, plane: Option<Plane>, n_bins: usize, ranges: [AxisRange; 2], out_of_range: f64) -> Self {
        Self {
            format: "h2d".into(),
            version: 1,
            content,
            plane,
            n_bins,
            axis_ranges: [[ranges[0].min, ranges[0].max], [ranges[1].min, ranges[1].max]],
            out_of_range,
            dtype: "f64-le".into(),
            order: "row-major".into(),
        }
    }

    pub fn ranges(&self) -> Result<[AxisRange; 2], CodecError> {
        let r = |v: [f64; 2]| AxisRange::new(v[0], v[1]).map_err(|e| CodecError::InvalidField(e.to_string()));
        Ok([r(self.axis_ranges[0])?, r(self.axis_ranges[1])?])
    }

    pub fn payload_len(&self) -> usize {
        self.n_bins * self.n_bins * 8
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        let s: Self = serde_json::from_str(text).map_err(|e| CodecError::Json(e.to_string()))?;
        if s.format != "h2d" {
            return Err(CodecError::InvalidField(format!("format '{}'", s.format)));
        }
        if s.version != 1 {
            return Err(CodecError::UnsupportedVersion(s.version));
        }
        if s.dtype != "f64-le" || s.order != "row-major" {
            return Err(CodecError::InvalidField("only f64-le row-major grids are supported".into()));
        }
        Ok(s)
    }

    fn check(&self, bytes: &[u8], content: GridContent) -> Result<Vec<f64>, CodecError> {
        if self.content != content {
            return Err(CodecError::InvalidField(format!(
                "expected {content:?} grid, sidecar says {:?}",
                self.content
            )));
        }
        if bytes.len() != self.payload_len() {
            return Err(CodecError::SizeMismatch {
                expected: self.payload_len(),
                got: bytes.len(),
            });
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Raw row-major doubles plus sidecar metadata.
pub fn encode_histogram(hist: &Histogram2D) -> (Vec<u8>, GridSidecar) {
    let mut out = Vec::with_capacity(hist.payload_bytes());
    put_f64s(&mut out, hist.counts());
    let side = GridSidecar::new(
        GridContent::Counts,
        Some(hist.plane()),
        hist.n_bins(),
        hist.ranges(),
        hist.out_of_range_count(),
    );
    (out, side)
}

pub fn decode_histogram(bytes: &[u8], sidecar: &GridSidecar) -> Result<Histogram2D, CodecError> {
    let counts = sidecar.check(bytes, GridContent::Counts)?;
    let plane = sidecar
        .plane
        .ok_or_else(|| CodecError::InvalidField("histogram sidecar has no plane".into()))?;
    Histogram2D::from_counts(plane, sidecar.n_bins, sidecar.ranges()?, counts, sidecar.out_of_range)
        .map_err(CodecError::InvalidField)
}

pub fn encode_pdf(pdf: &PdfGrid, plane: Option<Plane>) -> (Vec<u8>, GridSidecar) {
    let mut out = Vec::with_capacity(pdf.values().len() * 8);
    put_f64s(&mut out, pdf.values());
    (out, GridSidecar::new(GridContent::Density, plane, pdf.n_bins(), pdf.ranges(), 0.0))
}

pub fn decode_pdf(bytes: &[u8], sidecar: &GridSidecar) -> Result<PdfGrid, CodecError> {
    let values = sidecar.check(bytes, GridContent::Density)?;
    PdfGrid::from_stored_density(values, sidecar.n_bins, sidecar.ranges()?).map_err(|e| CodecError::InvalidField(e.to_string()))
}
