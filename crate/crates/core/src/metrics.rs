//! Information-loss and model-quality metrics. All logarithms are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::model_payload_len;
use crate::exec;
use crate::histogram::{bin_particles, refine_pdf, to_pdf, to_weighted_points, AxisRange, Histogram2D, WeightedPoints};
use crate::synthdata::ParticleSet;
use crate::wgmm::{evaluate_pdf_grid, GmmModel};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("grids are not aligned ({0})")]
    Misaligned(String),
    #[error("density grid must be non-negative with positive total mass")]
    BadDensity,
    #[error("JSD {0} is outside [0, ln 2] beyond rounding slack")]
    JsdOutOfRange(f64),
    #[error("compressed size must be positive")]
    ZeroCompressedSize,
    #[error("original size must be positive")]
    ZeroOriginalSize,
    #[error("n_observed must be positive, got {0}")]
    BadObservationCount(f64),
    #[error("dimension mismatch: model d={model}, data d={data}")]
    Dimension { model: usize, data: usize },
}

/// Square density grid that integrates to one over its range.
#[derive(Debug, Clone, PartialEq)]
pub struct PdfGrid {
    values: Vec<f64>,
    n_bins: usize,
    ranges: [AxisRange; 2],
}

impl PdfGrid {
    /// Wraps non-negative density values, renormalizing to unit mass.
    pub fn from_density(values: Vec<f64>, n_bins: usize, ranges: [AxisRange; 2]) -> Result<Self, MetricsError> {
        if values.len() != n_bins * n_bins || n_bins == 0 {
            return Err(MetricsError::BadDensity);
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MetricsError::BadDensity);
        }
        let area = bin_area(n_bins, &ranges);
        let mass = exec::deterministic_sum(&values) * area;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(MetricsError::BadDensity);
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self { values, n_bins, ranges })
    }

    /// Like [`PdfGrid::from_density`], but keeps the values bit for bit when
    /// their mass is already one to within `1e-9`.
    pub fn from_stored_density(values: Vec<f64>, n_bins: usize, ranges: [AxisRange; 2]) -> Result<Self, MetricsError> {
        if values.len() == n_bins * n_bins && n_bins > 0 && values.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            let mass = exec::deterministic_sum(&values) * bin_area(n_bins, &ranges);
            if (mass - 1.0).abs() <= 1e-9 {
                return Ok(Self { values, n_bins, ranges });
            }
        }
        Self::from_density(values, n_bins, ranges)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn ranges(&self) -> [AxisRange; 2] {
        self.ranges
    }

    pub fn bin_area(&self) -> f64 {
        bin_area(self.n_bins, &self.ranges)
    }

    /// Per-bin probability mass `value * bin_area`.
    pub fn probabilities(&self) -> Vec<f64> {
        let a = self.bin_area();
        self.values.iter().map(|v| v * a).collect()
    }

    /// Integral of the density over the grid.
    pub fn mass(&self) -> f64 {
        exec::deterministic_sum(&self.values) * self.bin_area()
    }

    fn check_aligned(&self, other: &PdfGrid) -> Result<(), MetricsError> {
        if self.n_bins != other.n_bins {
            return Err(MetricsError::Misaligned(format!(
                "{} vs {} bins",
                self.n_bins, other.n_bins
            )));
        }
        if self.ranges != other.ranges {
            return Err(MetricsError::Misaligned(format!(
                "ranges {:?} vs {:?}",
                self.ranges, other.ranges
            )));
        }
        Ok(())
    }
}

fn bin_area(n: usize, r: &[AxisRange; 2]) -> f64 {
    r[0].width() / n as f64 * r[1].width() / n as f64
}

/// KL divergence result; `Divergent` when `p` has mass where `q` has none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Divergence {
    Finite(f64),
    Divergent,
}

impl Divergence {
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Divergent => f64::INFINITY,
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, Divergence::Divergent)
    }
}

/// `sum p log(p / q)` over probability vectors, with `0 log 0 = 0`.
pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> Divergence {
    assert_eq!(p.len(), q.len());
    let mut terms = Vec::with_capacity(p.len());
    for (&pn, &qn) in p.iter().zip(q) {
        if pn > 0.0 {
            if qn <= 0.0 {
                return Divergence::Divergent;
            }
            terms.push(pn * (pn / qn).ln());
        }
    }
    Divergence::Finite(exec::deterministic_sum(&terms))
}

/// Kullback–Leibler divergence `D(P || Q)` on aligned grids.
pub fn kl_divergence(p: &PdfGrid, q: &PdfGrid) -> Result<Divergence, MetricsError> {
    p.check_aligned(q)?;
    Ok(kl_divergence_probs(&p.probabilities(), &q.probabilities()))
}

/// Jensen–Shannon divergence of two probability vectors, before clamping.
pub fn jsd_probs_unclamped(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    // m > 0 wherever p or q has mass, so neither term can diverge.
    0.5 * kl_divergence_probs(p, &m).value() + 0.5 * kl_divergence_probs(q, &m).value()
}

/// Jensen–Shannon divergence clamped to `[0, ln 2]`.
pub fn jsd_probs(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    let raw = jsd_probs_unclamped(p, q);
    let ln2 = std::f64::consts::LN_2;
    if !raw.is_finite() || raw < -1e-9 || raw > ln2 + 1e-9 {
        return Err(MetricsError::JsdOutOfRange(raw));
    }
    Ok(raw.clamp(0.0, ln2))
}

/// Jensen–Shannon divergence `½D(P||M) + ½D(Q||M)`, `M = (P+Q)/2`.
pub fn jsd(p: &PdfGrid, q: &PdfGrid) -> Result<f64, MetricsError> {
    p.check_aligned(q)?;
    jsd_probs(&p.probabilities(), &q.probabilities())
}

/// Free-parameter count of a full-covariance mixture: `M (1 + d(d+3)/2)`.
pub fn parameter_count(components: usize, dim: usize) -> usize {
    components * (1 + dim * (dim + 3) / 2)
}

/// Bayesian information criterion `-2 ln L + k ln N` from a log-likelihood.
pub fn bic_value(loglik: f64, components: usize, dim: usize, n_observed: f64) -> Result<f64, MetricsError> {
    if !(n_observed > 0.0) {
        return Err(MetricsError::BadObservationCount(n_observed));
    }
    Ok(-2.0 * loglik + parameter_count(components, dim) as f64 * n_observed.ln())
}

pub fn bic(loglik: f64, model: &GmmModel, n_observed: f64) -> Result<f64, MetricsError> {
    bic_value(loglik, model.len(), model.dimension(), n_observed)
}

/// Relative moment errors between a mixture and weighted data.
///
/// Both are measured against the data's second-moment scale:
/// `mean = |mu_model - mu_data| / sqrt(|S_data|_F)` and
/// `second_moment = |S_model - S_data|_F / |S_data|_F`, where `S = E[x x^T]`.
/// Using the second moment as the scale keeps the mean error meaningful for
/// distributions centered at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub mean: f64,
    pub second_moment: f64,
}

pub fn moment_errors(model: &GmmModel, points: &WeightedPoints) -> Result<MomentErrors, MetricsError> {
    if model.dimension() != points.dim() {
        return Err(MetricsError::Dimension {
            model: model.dimension(),
            data: points.dim(),
        });
    }
    let (mm, ms) = model.mixture_moments();
    let (dm, ds) = points.moments();
    Ok(relative_moment_errors(&mm, &ms, &dm, &ds))
}

pub fn relative_moment_errors(model_mean: &[f64], model_second: &[f64], data_mean: &[f64], data_second: &[f64]) -> MomentErrors {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let scale2 = norm(&mut data_second.iter().copied());
    let dmean = norm(&mut model_mean.iter().zip(data_mean).map(|(a, b)| a - b));
    let dsec = norm(&mut model_second.iter().zip(data_second).map(|(a, b)| a - b));
    if scale2 > 0.0 {
        MomentErrors {
            mean: dmean / scale2.sqrt(),
            second_moment: dsec / scale2,
        }
    } else {
        MomentErrors {
            mean: dmean,
            second_moment: dsec,
        }
    }
}

/// `original / compressed`.
pub fn compression_ratio(original_bytes: usize, compressed_bytes: usize) -> Result<f64, MetricsError> {
    if compressed_bytes == 0 {
        return Err(MetricsError::ZeroCompressedSize);
    }
    if original_bytes == 0 {
        return Err(MetricsError::ZeroOriginalSize);
    }
    Ok(original_bytes as f64 / compressed_bytes as f64)
}

/// Quality summary of one fitted plane. Field names are the JSON keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub plane: String,
    pub components: usize,
    /// EM iterations, when the report comes from a fit.
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// `sum_n w_n ln p(x_n)` over the histogram's bin centers.
    pub loglik: f64,
    /// JSD between the mixture and the histogram pdf on the histogram grid.
    pub jsd: f64,
    /// JSD between the mixture and a fine direct binning of the particles,
    /// when particles are available.
    pub jsd_vs_original: Option<f64>,
    /// JSD between the refined histogram and the fine direct binning.
    pub jsd_histogram_vs_original: Option<f64>,
    pub kl_pq: Divergence,
    pub kl_qp: Divergence,
    /// BIC with N = total particle weight.
    pub bic: f64,
    /// BIC with N = number of non-empty bins.
    pub bic_bins: f64,
    pub moment_errors: MomentErrors,
    /// Model payload bytes (header excluded).
    pub compressed_bytes: usize,
    /// Histogram payload bytes.
    pub histogram_bytes: usize,
    /// Raw velocity bytes of the plane's two components, `N * 2 * 8`.
    pub raw_bytes: Option<usize>,
    pub compression_ratio_vs_histogram: f64,
    pub compression_ratio_vs_raw: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "plane,components,iterations,converged,loglik,jsd,jsd_vs_original,jsd_histogram_vs_original,kl_pq,kl_qp,bic,bic_bins,mean_error,second_moment_error,compressed_bytes,histogram_bytes,raw_bytes,ratio_vs_histogram,ratio_vs_raw";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.plane,
            self.components,
            self.iterations.map(|v| v.to_string()).unwrap_or_default(),
            self.converged.map(|v| v.to_string()).unwrap_or_default(),
            self.loglik,
            self.jsd,
            opt(self.jsd_vs_original),
            opt(self.jsd_histogram_vs_original),
            self.kl_pq.value(),
            self.kl_qp.value(),
            self.bic,
            self.bic_bins,
            self.moment_errors.mean,
            self.moment_errors.second_moment,
            self.compressed_bytes,
            self.histogram_bytes,
            self.raw_bytes.map(|v| v.to_string()).unwrap_or_default(),
            self.compression_ratio_vs_histogram,
            opt(self.compression_ratio_vs_raw),
        )
    }
}

/// Scores a fitted plane model against its histogram and, when given, the
/// particles the histogram came from. The fine reference is a direct
/// `reference_bins`-square binning of the particles over the histogram's
/// range; the histogram is compared to it after bilinear refinement.
pub fn plane_report(
    model: &GmmModel,
    hist: &Histogram2D,
    particles: Option<&ParticleSet>,
    reference_bins: usize,
) -> crate::Result<MetricsReport> {
    let ranges = hist.ranges();
    let n = hist.n_bins();
    let hist_pdf = to_pdf(hist)?;
    let model_pdf = evaluate_pdf_grid(model, n, ranges)?;
    let points = to_weighted_points(hist, true)?;

    let loglik = {
        let d = points.dim();
        let terms: Vec<f64> = (0..points.len())
            .map(|k| points.weights()[k] * model.log_pdf(&points.coords()[k * d..(k + 1) * d]))
            .collect();
        exec::deterministic_sum(&terms)
    };
    let total = points.total_weight();
    let compressed_bytes = model_payload_len(model.len(), model.dimension());
    let histogram_bytes = hist.payload_bytes();

    let (jsd_vs_original, jsd_histogram_vs_original, raw_bytes) = match particles {
        Some(p) => {
            let target = reference_bins.max(n);
            let fine = to_pdf(&bin_particles(p, hist.plane(), target, ranges)?)?;
            let model_fine = evaluate_pdf_grid(model, target, ranges)?;
            let refined = refine_pdf(hist, target)?;
            (
                Some(jsd(&model_fine, &fine)?),
                Some(jsd(&refined, &fine)?),
                Some(p.len() * 2 * 8),
            )
        }
        None => (None, None, None),
    };

    Ok(MetricsReport {
        plane: hist.plane().to_string(),
        components: model.len(),
        iterations: None,
        converged: None,
        loglik,
        jsd: jsd(&model_pdf, &hist_pdf)?,
        jsd_vs_original,
        jsd_histogram_vs_original,
        kl_pq: kl_divergence(&hist_pdf, &model_pdf)?,
        kl_qp: kl_divergence(&model_pdf, &hist_pdf)?,
        bic: bic(loglik, model, total)?,
        bic_bins: bic(loglik, model, points.len() as f64)?,
        moment_errors: moment_errors(model, &points)?,
        compressed_bytes,
        histogram_bytes,
        raw_bytes,
        compression_ratio_vs_histogram: compression_ratio(histogram_bytes, compressed_bytes)?,
        compression_ratio_vs_raw: raw_bytes.map(|r| compression_ratio(r, compressed_bytes)).transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(p: [f64; 4]) -> PdfGrid {
        PdfGrid::from_density(p.to_vec(), 2, [AxisRange::new(0.0, 1.0).unwrap(); 2]).unwrap()
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let p = grid2([0.1, 0.2, 0.3, 0.4]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), Divergence::Finite(0.0));
    }

    #[test]
    fn kl_hand_value() {
        let p = grid2([0.5, 0.5, 0.0, 0.0]);
        let q = grid2([0.9, 0.1, 0.0, 0.0]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let got = kl_divergence(&p, &q).unwrap().value();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn kl_divergent_marker() {
        let p = grid2([0.5, 0.5, 0.0, 0.0]);
        let q = grid2([1.0, 0.0, 0.0, 0.0]);
        assert!(kl_divergence(&p, &q).unwrap().is_divergent());
    }

    #[test]
    fn jsd_basic_properties() {
        let p = grid2([0.1, 0.2, 0.3, 0.4]);
        let q = grid2([0.4, 0.1, 0.1, 0.4]);
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&p, &q).unwrap() - jsd(&q, &p).unwrap()).abs() < 1e-12);
        let a = grid2([1.0, 1.0, 0.0, 0.0]);
        let b = grid2([0.0, 0.0, 1.0, 1.0]);
        assert!((jsd(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn jsd_rejects_misaligned() {
        let p = grid2([0.1, 0.2, 0.3, 0.4]);
        let q = PdfGrid::from_density(vec![1.0; 4], 2, [AxisRange::new(0.0, 2.0).unwrap(); 2]).unwrap();
        assert!(matches!(jsd(&p, &q), Err(MetricsError::Misaligned(_))));
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(parameter_count(8, 2), 48);
        assert_eq!(parameter_count(12, 3), 120);
        assert_eq!(parameter_count(1, 2), 6);
    }

    #[test]
    fn bic_arithmetic() {
        let b = bic_value(0.0, 1, 2, std::f64::consts::E).unwrap();
        assert!((b - 6.0).abs() < 1e-12);
        assert!(bic_value(0.0, 1, 2, 0.0).is_err());
    }

    #[test]
    fn ratio() {
        assert_eq!(compression_ratio(40_000, 400).unwrap(), 100.0);
        assert_eq!(compression_ratio(1, 0), Err(MetricsError::ZeroCompressedSize));
        let r = compression_ratio(10_000 * 2 * 8, 12 * 8).unwrap();
        assert!((r - 1666.67).abs() < 0.01);
    }

    #[test]
    fn pdf_grid_normalizes() {
        let g = PdfGrid::from_density(vec![3.0; 9], 3, [AxisRange::new(-1.0, 2.0).unwrap(); 2]).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-12);
        assert!(PdfGrid::from_density(vec![0.0; 9], 3, g.ranges()).is_err());
        assert!(PdfGrid::from_density(vec![-1.0; 9], 3, g.ranges()).is_err());
    }
}
