//! Fixed-range 2D velocity histograms and their conversion to weighted
//! observations for the mixture fit.
//!
//! Counts are stored row-major: `counts[i * n_bins + j]` holds bin `i` along
//! the plane's first axis and bin `j` along its second axis. Bins are
//! left-closed and right-open except the last bin on each axis, which is
//! closed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::metrics::PdfGrid;
use crate::synthdata::ParticleSet;

/// Particles per partial histogram in the partition-and-merge binning.
pub const BINNING_CHUNK: usize = 1 << 16;

/// Default fixed range in units of the nominal thermal speed.
pub const DEFAULT_RANGE_THERMAL_SPEEDS: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum HistogramError {
    #[error("plane {plane} needs axis {axis}, but particles have dimension {dimension}")]
    Dimension {
        plane: Plane,
        axis: usize,
        dimension: usize,
    },
    #[error("all_planes needs 3D velocities (got d={0}); use bin_particles for a single plane")]
    NotThreeDimensional(usize),
    #[error("n_bins must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("invalid axis range [{min}, {max}]")]
    BadRange { min: f64, max: f64 },
    #[error("histogram has no in-range weight (degenerate input)")]
    Degenerate,
    #[error("refinement target {target} is smaller than source resolution {source_bins}")]
    Downsample { target: usize, source_bins: usize },
}

/// One of the three velocity planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Uv,
    Vw,
    Uw,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Uv, Plane::Vw, Plane::Uw];

    /// Velocity-component indices `(first, second)` spanned by the plane.
    pub fn axes(self) -> (usize, usize) {
        match self {
            Plane::Uv => (0, 1),
            Plane::Vw => (1, 2),
            Plane::Uw => (0, 2),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Uv => "uv",
            Plane::Vw => "vw",
            Plane::Uw => "uw",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Plane::Uv => 0,
            Plane::Vw => 1,
            Plane::Uw => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Plane::Uv),
            1 => Some(Plane::Vw),
            2 => Some(Plane::Uw),
            _ => None,
        }
    }
}

impl std::fmt::Display for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uv" => Ok(Plane::Uv),
            "vw" => Ok(Plane::Vw),
            "uw" => Ok(Plane::Uw),
            other => Err(format!("unknown plane '{other}' (expected uv, vw or uw)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub fn new(min: f64, max: f64) -> Result<Self, HistogramError> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(HistogramError::BadRange { min, max });
        }
        Ok(Self { min, max })
    }

    pub fn symmetric(half_width: f64) -> Result<Self, HistogramError> {
        Self::new(-half_width, half_width)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    /// Bin index of `x` for `n` bins, or `None` when outside the range.
    #[inline]
    pub fn bin_of(&self, x: f64, n: usize) -> Option<usize> {
        if !(x >= self.min && x <= self.max) {
            return None;
        }
        let t = (x - self.min) * n as f64 / (self.max - self.min);
        Some((t as usize).min(n - 1))
    }

    /// Center of bin `i` for `n` bins.
    #[inline]
    pub fn center(&self, i: usize, n: usize) -> f64 {
        self.min + (i as f64 + 0.5) * (self.max - self.min) / n as f64
    }
}

/// Default per-axis range: +/- 5 nominal thermal speeds on each plane axis,
/// where the thermal speed is the square root of the nominal temperature.
pub fn default_ranges(particles: &ParticleSet, plane: Plane) -> Result<[AxisRange; 2], HistogramError> {
    let (a, b) = plane.axes();
    let d = particles.dimension();
    let axis = a.max(b);
    if axis >= d {
        return Err(HistogramError::Dimension {
            plane,
            axis,
            dimension: d,
        });
    }
    let t = particles.nominal_temperature();
    Ok([
        AxisRange::symmetric(DEFAULT_RANGE_THERMAL_SPEEDS * t[a].sqrt())?,
        AxisRange::symmetric(DEFAULT_RANGE_THERMAL_SPEEDS * t[b].sqrt())?,
    ])
}

/// Fixed-range 2D grid of summed particle weights over one velocity plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    counts: Vec<f64>,
    n_bins: usize,
    ranges: [AxisRange; 2],
    plane: Plane,
    out_of_range: f64,
}

impl Histogram2D {
    /// Builds a histogram from raw counts. Fails on negative or non-finite
    /// counts, a count length that is not `n_bins^2`, or invalid ranges.
    pub fn from_counts(
        plane: Plane,
        n_bins: usize,
        ranges: [AxisRange; 2],
        counts: Vec<f64>,
        out_of_range: f64,
    ) -> Result<Self, String> {
        if n_bins < 2 {
            return Err(format!("n_bins must be at least 2, got {n_bins}"));
        }
        if counts.len() != n_bins * n_bins {
            return Err(format!(
                "expected {} counts for {n_bins}x{n_bins} bins, got {}",
                n_bins * n_bins,
                counts.len()
            ));
        }
        for r in &ranges {
            AxisRange::new(r.min, r.max).map_err(|e| e.to_string())?;
        }
        if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err("counts must be finite and non-negative".into());
        }
        if !(out_of_range >= 0.0) {
            return Err("out_of_range must be non-negative".into());
        }
        Ok(Self {
            counts,
            n_bins,
            ranges,
            plane,
            out_of_range,
        })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.n_bins + j]
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn ranges(&self) -> [AxisRange; 2] {
        self.ranges
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn out_of_range_count(&self) -> f64 {
        self.out_of_range
    }

    pub fn in_range_total(&self) -> f64 {
        exec::deterministic_sum(&self.counts)
    }

    /// No in-range weight at all (e.g. built from an empty particle set).
    pub fn is_degenerate(&self) -> bool {
        self.counts.iter().all(|&c| c == 0.0)
    }

    pub fn bin_area(&self) -> f64 {
        self.ranges[0].width() / self.n_bins as f64 * self.ranges[1].width() / self.n_bins as f64
    }

    /// Payload size of the row-major double grid.
    pub fn payload_bytes(&self) -> usize {
        self.counts.len() * 8
    }
}

fn validate_binning(n_bins: usize, ranges: &[AxisRange; 2]) -> Result<(), HistogramError> {
    if n_bins < 2 {
        return Err(HistogramError::TooFewBins(n_bins));
    }
    for r in ranges {
        AxisRange::new(r.min, r.max)?;
    }
    Ok(())
}

/// Bins the projection of every particle onto `plane`.
pub fn bin_particles(
    particles: &ParticleSet,
    plane: Plane,
    n_bins: usize,
    ranges: [AxisRange; 2],
) -> Result<Histogram2D, HistogramError> {
    bin_particles_with(particles, plane, n_bins, ranges, Execution::default())
}

pub fn bin_particles_with(
    particles: &ParticleSet,
    plane: Plane,
    n_bins: usize,
    ranges: [AxisRange; 2],
    exec: Execution,
) -> Result<Histogram2D, HistogramError> {
    validate_binning(n_bins, &ranges)?;
    let d = particles.dimension();
    let (a, b) = plane.axes();
    if a.max(b) >= d {
        return Err(HistogramError::Dimension {
            plane,
            axis: a.max(b),
            dimension: d,
        });
    }

    let velocities = particles.velocities();
    let weights = particles.weights();
    let partials = exec::map_chunks(exec, velocities, BINNING_CHUNK * d, |chunk_idx, chunk| {
        let first = chunk_idx * BINNING_CHUNK;
        let mut counts = vec![0.0; n_bins * n_bins];
        let mut outside = 0.0;
        for (k, v) in chunk.chunks_exact(d).enumerate() {
            let w = weights.map_or(1.0, |w| w[first + k]);
            match (ranges[0].bin_of(v[a], n_bins), ranges[1].bin_of(v[b], n_bins)) {
                (Some(i), Some(j)) => counts[i * n_bins + j] += w,
                _ => outside += w,
            }
        }
        (counts, outside)
    });
    let (counts, out_of_range) = exec::tree_reduce(partials, |(mut c1, o1), (c2, o2)| {
        for (x, y) in c1.iter_mut().zip(&c2) {
            *x += y;
        }
        (c1, o1 + o2)
    })
    .unwrap_or_else(|| (vec![0.0; n_bins * n_bins], 0.0));

    Ok(Histogram2D {
        counts,
        n_bins,
        ranges,
        plane,
        out_of_range,
    })
}

/// The three marginal histograms `f(u,v)`, `f(v,w)`, `f(u,w)`, in
/// [`Plane::ALL`] order. `range` applies to every velocity axis.
pub fn all_planes(
    particles: &ParticleSet,
    n_bins: usize,
    range: AxisRange,
) -> Result<[Histogram2D; 3], HistogramError> {
    all_planes_with(particles, n_bins, range, Execution::default())
}

pub fn all_planes_with(
    particles: &ParticleSet,
    n_bins: usize,
    range: AxisRange,
    exec: Execution,
) -> Result<[Histogram2D; 3], HistogramError> {
    if particles.dimension() != 3 {
        return Err(HistogramError::NotThreeDimensional(particles.dimension()));
    }
    let uv = bin_particles_with(particles, Plane::Uv, n_bins, [range; 2], exec)?;
    let vw = bin_particles_with(particles, Plane::Vw, n_bins, [range; 2], exec)?;
    let uw = bin_particles_with(particles, Plane::Uw, n_bins, [range; 2], exec)?;
    Ok([uv, vw, uw])
}

/// Bin centers with bin-count weights: the observed data for the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPoints {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    total_weight: f64,
}

impl WeightedPoints {
    /// Builds from flat `n * dim` coordinates and `n` weights.
    pub fn new(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self, String> {
        if dim == 0 || coords.len() != weights.len() * dim {
            return Err(format!(
                "{} coordinates do not match {} weights in dimension {dim}",
                coords.len(),
                weights.len()
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err("weights must be finite and non-negative".into());
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err("coordinates must be finite".into());
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err("at least one weight must be positive".into());
        }
        let total_weight = exec::deterministic_sum(&weights);
        Ok(Self {
            dim,
            coords,
            weights,
            total_weight,
        })
    }

    /// Unit weights for every point.
    pub fn unweighted(dim: usize, coords: Vec<f64>) -> Result<Self, String> {
        let n = if dim == 0 { 0 } else { coords.len() / dim };
        Self::new(dim, coords, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, n: usize) -> &[f64] {
        &self.coords[n * self.dim..(n + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Number of distinct positive-weight points.
    pub fn distinct_support(&self) -> usize {
        let mut pts: Vec<&[f64]> = (0..self.len())
            .filter(|&n| self.weights[n] > 0.0)
            .map(|n| self.point(n))
            .collect();
        pts.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        pts.dedup();
        pts.len()
    }

    /// Weighted mean and weighted second moment `E[x x^T]` (row-major).
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let partials: Vec<Vec<f64>> = self
            .weights
            .chunks(exec::REDUCTION_CHUNK)
            .zip(self.coords.chunks(exec::REDUCTION_CHUNK * d))
            .map(|(w, x)| {
                let mut acc = vec![0.0; d + d * d];
                for (wn, xn) in w.iter().zip(x.chunks_exact(d)) {
                    for i in 0..d {
                        acc[i] += wn * xn[i];
                        for j in 0..d {
                            acc[d + i * d + j] += wn * xn[i] * xn[j];
                        }
                    }
                }
                acc
            })
            .collect();
        let acc = exec::tree_reduce(partials, |mut a, b| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            a
        })
        .unwrap_or_else(|| vec![0.0; d + d * d]);
        let w = self.total_weight;
        let mean = acc[..d].iter().map(|v| v / w).collect();
        let second = acc[d..].iter().map(|v| v / w).collect();
        (mean, second)
    }
}

/// One point per bin at the bin center, weighted by the bin count. With
/// `drop_empty`, zero-count bins are skipped; the total weight is the same
/// either way.
pub fn to_weighted_points(hist: &Histogram2D, drop_empty: bool) -> Result<WeightedPoints, HistogramError> {
    if hist.is_degenerate() {
        return Err(HistogramError::Degenerate);
    }
    let n = hist.n_bins;
    let mut coords = Vec::with_capacity(2 * n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = hist.ranges[0].center(i, n);
        for j in 0..n {
            let w = hist.counts[i * n + j];
            if drop_empty && w == 0.0 {
                continue;
            }
            coords.push(u);
            coords.push(hist.ranges[1].center(j, n));
            weights.push(w);
        }
    }
    WeightedPoints::new(2, coords, weights).map_err(|_| HistogramError::Degenerate)
}

/// Density estimate: counts divided by (in-range weight x bin area).
pub fn to_pdf(hist: &Histogram2D) -> Result<PdfGrid, HistogramError> {
    if hist.is_degenerate() {
        return Err(HistogramError::Degenerate);
    }
    PdfGrid::from_density(hist.counts.clone(), hist.n_bins, hist.ranges)
        .map_err(|_| HistogramError::Degenerate)
}

/// Bilinear interpolation of the histogram pdf onto a finer
/// `target_bins x target_bins` grid over the same range.
///
/// Coarse values sit at coarse bin centers. Fine centers in the outer half
/// bin are linearly extrapolated from the nearest two coarse centers and
/// clamped at zero; the result is renormalized to unit mass.
pub fn refine_pdf(hist: &Histogram2D, target_bins: usize) -> Result<PdfGrid, HistogramError> {
    if target_bins < hist.n_bins {
        return Err(HistogramError::Downsample {
            target: target_bins,
            source_bins: hist.n_bins,
        });
    }
    let coarse = to_pdf(hist)?;
    if target_bins == hist.n_bins {
        return Ok(coarse);
    }
    Ok(refine_grid(&coarse, target_bins))
}

/// Bilinear refinement of an existing pdf grid; see [`refine_pdf`].
pub fn refine_grid(coarse: &PdfGrid, target_bins: usize) -> PdfGrid {
    let nc = coarse.n_bins();
    let nf = target_bins;
    let v = coarse.values();
    // Position of fine center k in coarse-center index space.
    let locate = |k: usize| -> (usize, f64) {
        let s = (k as f64 + 0.5) * nc as f64 / nf as f64 - 0.5;
        let i0 = (s.floor().max(0.0) as usize).min(nc - 2);
        (i0, s - i0 as f64)
    };
    let cols: Vec<(usize, f64)> = (0..nf).map(locate).collect();
    let mut out = vec![0.0; nf * nf];
    for (r, &(i0, fi)) in cols.iter().enumerate() {
        for (c, &(j0, fj)) in cols.iter().enumerate() {
            let v00 = v[i0 * nc + j0];
            let v01 = v[i0 * nc + j0 + 1];
            let v10 = v[(i0 + 1) * nc + j0];
            let v11 = v[(i0 + 1) * nc + j0 + 1];
            let val = (1.0 - fi) * ((1.0 - fj) * v00 + fj * v01) + fi * ((1.0 - fj) * v10 + fj * v11);
            out[r * nf + c] = val.max(0.0);
        }
    }
    PdfGrid::from_density(out, nf, coarse.ranges()).expect("refined mass is positive")
}
