use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::histogram::AxisRange;
use crate::linalg::{Cholesky, SymMatrix};
use crate::metrics::{MetricsError, PdfGrid};

use super::FitError;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-axis affine map from data space to the fitting frame:
/// `y = (x - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.offset.iter().all(|&o| o == 0.0)
    }

    #[inline]
    pub fn forward(&self, x: &[f64], out: &mut [f64]) {
        for a in 0..self.dim() {
            out[a] = (x[a] - self.offset[a]) / self.scale[a];
        }
    }

    #[inline]
    pub fn inverse(&self, y: &[f64], out: &mut [f64]) {
        for a in 0..self.dim() {
            out[a] = self.scale[a] * y[a] + self.offset[a];
        }
    }

    /// `ln |det dy/dx| = -sum ln scale`.
    pub fn log_jacobian(&self) -> f64 {
        -self.scale.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// One weighted Gaussian of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
}

/// Gaussian mixture whose components live in the frame given by
/// `normalization`; [`GmmModel::pdf`] always evaluates in data space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    normalization: AffineMap,
    dimension: usize,
}

impl GmmModel {
    /// Validates dimensions, weights (each in (0, 1], summing to 1 within
    /// 1e-12) and SPD covariances.
    pub fn new(components: Vec<GaussianComponent>, normalization: AffineMap) -> Result<Self, FitError> {
        let dimension = normalization.dim();
        if components.is_empty() {
            return Err(FitError::InvalidModel("model has no components".into()));
        }
        if normalization.scale.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || normalization.offset.len() != dimension
            || normalization.offset.iter().any(|o| !o.is_finite())
        {
            return Err(FitError::InvalidModel("bad normalization map".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dimension || c.covariance.dim() != dimension {
                return Err(FitError::InvalidModel(format!(
                    "component {i} does not have dimension {dimension}"
                )));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(FitError::InvalidModel(format!(
                    "component {i} weight {} outside (0, 1]",
                    c.weight
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(FitError::InvalidModel(format!("component {i} has a non-finite mean")));
            }
            if c.covariance.cholesky().is_none() {
                return Err(FitError::NotSpd { component: i });
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(FitError::InvalidModel(format!("weights sum to {sum}")));
        }
        Ok(Self {
            components,
            normalization,
            dimension,
        })
    }

    /// Construction without validation, for internal states mid-iteration.
    pub(crate) fn from_parts_unchecked(components: Vec<GaussianComponent>, normalization: AffineMap) -> Self {
        let dimension = normalization.dim();
        Self {
            components,
            normalization,
            dimension,
        }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn normalization(&self) -> &AffineMap {
        &self.normalization
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Indices of components ordered by descending weight.
    pub fn by_weight(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.components[b].weight.total_cmp(&self.components[a].weight));
        idx
    }

    /// Density at data-space point `x`.
    pub fn pdf(&self, x: &[f64]) -> f64 {
        Evaluator::new(self).log_pdf(x).exp()
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        Evaluator::new(self).log_pdf(x)
    }
}

/// Maps the components back to data space and sets an identity map:
/// `mu -> S mu + offset`, `Sigma -> S Sigma S` with `S = diag(scale)`.
pub fn denormalize_model(model: &GmmModel) -> GmmModel {
    let map = &model.normalization;
    if map.is_identity() {
        return model.clone();
    }
    let d = model.dimension;
    let components = model
        .components
        .iter()
        .map(|c| {
            let mut mean = vec![0.0; d];
            map.inverse(&c.mean, &mut mean);
            GaussianComponent {
                weight: c.weight,
                mean,
                covariance: c.covariance.scaled(&map.scale),
            }
        })
        .collect();
    GmmModel::from_parts_unchecked(components, AffineMap::identity(d))
}

/// Re-expresses a model in the frame of `map` (the inverse of
/// [`denormalize_model`] for that map).
pub fn into_frame(model: &GmmModel, map: &AffineMap) -> GmmModel {
    let data = denormalize_model(model);
    let d = model.dimension;
    let inv: Vec<f64> = map.scale.iter().map(|s| 1.0 / s).collect();
    let components = data
        .components
        .iter()
        .map(|c| {
            let mut mean = vec![0.0; d];
            map.forward(&c.mean, &mut mean);
            GaussianComponent {
                weight: c.weight,
                mean,
                covariance: c.covariance.scaled(&inv),
            }
        })
        .collect();
    GmmModel::from_parts_unchecked(components, map.clone())
}

/// Mixture mean `sum a_i mu_i` and second moment `sum a_i (Sigma_i + mu_i mu_i^T)`
/// (row-major), in data space.
pub fn mixture_moments(model: &GmmModel) -> (Vec<f64>, Vec<f64>) {
    let data = denormalize_model(model);
    let d = data.dimension;
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d * d];
    for c in &data.components {
        for i in 0..d {
            mean[i] += c.weight * c.mean[i];
            for j in 0..d {
                second[i * d + j] += c.weight * (c.covariance.get(i, j) + c.mean[i] * c.mean[j]);
            }
        }
    }
    (mean, second)
}

impl GmmModel {
    pub fn mixture_moments(&self) -> (Vec<f64>, Vec<f64>) {
        mixture_moments(self)
    }
}

/// Precomputed per-component log normalizers and Cholesky factors.
pub(crate) struct Evaluator<'a> {
    model: &'a GmmModel,
    log_coef: Vec<f64>,
    chols: Vec<Option<Cholesky>>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(model: &'a GmmModel) -> Self {
        let d = model.dimension as f64;
        let mut log_coef = Vec::with_capacity(model.len());
        let mut chols = Vec::with_capacity(model.len());
        for c in &model.components {
            let chol = c.covariance.cholesky();
            let lc = match &chol {
                Some(ch) => c.weight.ln() - 0.5 * (d * LN_2PI + ch.log_det()),
                None => f64::NEG_INFINITY,
            };
            log_coef.push(lc);
            chols.push(chol);
        }
        Self { model, log_coef, chols }
    }

    /// `ln a_i + ln N(y | mu_i, Sigma_i)` for a frame-space point `y`.
    #[inline]
    pub(crate) fn component_log_terms(&self, y: &[f64], out: &mut [f64]) {
        let d = self.model.dimension;
        let mut diff = [0.0f64; 8];
        for (i, c) in self.model.components.iter().enumerate() {
            out[i] = match &self.chols[i] {
                Some(ch) => {
                    for a in 0..d {
                        diff[a] = y[a] - c.mean[a];
                    }
                    self.log_coef[i] - 0.5 * ch.mahalanobis_sq(&diff[..d])
                }
                None => f64::NEG_INFINITY,
            };
        }
    }

    pub(crate) fn failed_components(&self) -> Vec<usize> {
        (0..self.chols.len()).filter(|&i| self.chols[i].is_none()).collect()
    }

    /// Log density at a data-space point.
    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.model.dimension;
        let mut y = [0.0f64; 8];
        self.model.normalization.forward(x, &mut y[..d]);
        let mut terms = vec![0.0; self.model.len()];
        self.component_log_terms(&y[..d], &mut terms);
        log_sum_exp(&terms) + self.model.normalization.log_jacobian()
    }
}

#[inline]
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

/// Evaluates the mixture density at the centers of an `n_bins x n_bins`
/// grid over `ranges` (row-major, first axis outer). Requires d = 2.
pub fn evaluate_pdf(model: &GmmModel, n_bins: usize, ranges: [AxisRange; 2]) -> Result<Vec<f64>, FitError> {
    evaluate_pdf_with(model, n_bins, ranges, Execution::default())
}

pub fn evaluate_pdf_with(
    model: &GmmModel,
    n_bins: usize,
    ranges: [AxisRange; 2],
    exec: Execution,
) -> Result<Vec<f64>, FitError> {
    if model.dimension != 2 {
        return Err(FitError::DimensionMismatch {
            expected: 2,
            got: model.dimension,
        });
    }
    let eval = Evaluator::new(model);
    let mut out = vec![0.0; n_bins * n_bins];
    exec::for_each_chunk_mut(exec, &mut out, n_bins, |i, row| {
        let u = ranges[0].center(i, n_bins);
        for (j, v) in row.iter_mut().enumerate() {
            *v = eval.log_pdf(&[u, ranges[1].center(j, n_bins)]).exp();
        }
    });
    Ok(out)
}

/// [`evaluate_pdf`] renormalized over the grid, ready for divergence
/// comparison with a histogram pdf.
pub fn evaluate_pdf_grid(model: &GmmModel, n_bins: usize, ranges: [AxisRange; 2]) -> Result<PdfGrid, FitError> {
    let values = evaluate_pdf(model, n_bins, ranges)?;
    PdfGrid::from_density(values, n_bins, ranges).map_err(|e: MetricsError| FitError::InvalidModel(e.to_string()))
}
