use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution, REDUCTION_CHUNK};
use crate::histogram::WeightedPoints;
use crate::linalg::{packed_len, SymMatrix};
use crate::synthdata::uniform01;

use super::model::{into_frame, AffineMap, Evaluator, GaussianComponent, GmmModel};
use super::{FitConfig, FitError};

/// Per-axis map of the positive-weight points' bounding box onto [-1, 1].
/// Returns the transformed points (all of them, weights unchanged) and the
/// map.
pub fn normalize(points: &WeightedPoints) -> Result<(WeightedPoints, AffineMap), FitError> {
    let d = points.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for n in 0..points.len() {
        if points.weights()[n] > 0.0 {
            for (a, &x) in points.point(n).iter().enumerate() {
                lo[a] = lo[a].min(x);
                hi[a] = hi[a].max(x);
            }
        }
    }
    let mut scale = Vec::with_capacity(d);
    let mut offset = Vec::with_capacity(d);
    for a in 0..d {
        if !(hi[a] > lo[a]) {
            return Err(FitError::DegenerateAxis { axis: a });
        }
        scale.push(0.5 * (hi[a] - lo[a]));
        offset.push(0.5 * (hi[a] + lo[a]));
    }
    let map = AffineMap { scale, offset };
    let mut coords = vec![0.0; points.coords().len()];
    for (src, dst) in points.coords().chunks_exact(d).zip(coords.chunks_exact_mut(d)) {
        map.forward(src, dst);
    }
    let normalized = WeightedPoints::new(d, coords, points.weights().to_vec()).map_err(FitError::InvalidData)?;
    Ok((normalized, map))
}

/// Initial mixture in the frame of `map`.
///
/// Cold start: `m` components with weight `1/m`, covariance
/// `diag(temperature / scale^2)` and means uniform over the bounding box of
/// the (normalized) positive-weight points, drawn from ChaCha8 seeded with
/// `config.seed`. `m` is `config.initial_components`, reduced to the number
/// of distinct support points when there are fewer.
///
/// Warm start: `config.warm_start` mapped into the frame of `map`.
pub fn init_model(
    points: &WeightedPoints,
    map: &AffineMap,
    config: &FitConfig,
    temperature: &[f64],
) -> Result<GmmModel, FitError> {
    let d = points.dim();
    if let Some(warm) = &config.warm_start {
        if warm.dimension() != d {
            return Err(FitError::DimensionMismatch {
                expected: d,
                got: warm.dimension(),
            });
        }
        return Ok(into_frame(warm, map));
    }
    if temperature.len() != d || temperature.iter().any(|t| !(*t > 0.0)) {
        return Err(FitError::InvalidConfig(
            "initial variance must be positive on every axis".into(),
        ));
    }
    let m = effective_components(points, config.initial_components);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for n in 0..points.len() {
        if points.weights()[n] > 0.0 {
            for (a, &x) in points.point(n).iter().enumerate() {
                lo[a] = lo[a].min(x);
                hi[a] = hi[a].max(x);
            }
        }
    }
    let var: Vec<f64> = temperature
        .iter()
        .zip(&map.scale)
        .map(|(t, s)| t / (s * s))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let components = (0..m)
        .map(|_| GaussianComponent {
            weight: 1.0 / m as f64,
            mean: (0..d).map(|a| lo[a] + (hi[a] - lo[a]) * uniform01(&mut rng)).collect(),
            covariance: SymMatrix::from_diagonal(&var),
        })
        .collect();
    Ok(GmmModel::from_parts_unchecked(components, map.clone()))
}

pub(crate) fn effective_components(points: &WeightedPoints, requested: usize) -> usize {
    requested.min(points.distinct_support()).max(1)
}

/// Posterior membership probabilities, stored point-major:
/// `gamma(i, n) = values[n * components + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    components: usize,
    points: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn points(&self) -> usize {
        self.points
    }

    #[inline]
    pub fn get(&self, component: usize, point: usize) -> f64 {
        self.values[point * self.components + component]
    }

    /// All responsibilities of one point.
    pub fn column(&self, point: usize) -> &[f64] {
        &self.values[point * self.components..(point + 1) * self.components]
    }

    pub fn from_point_major(components: usize, values: Vec<f64>) -> Result<Self, FitError> {
        if components == 0 || values.len() % components != 0 {
            return Err(FitError::InvalidData("responsibility shape mismatch".into()));
        }
        Ok(Self {
            components,
            points: values.len() / components,
            values,
        })
    }
}

/// Output of [`e_step`].
#[derive(Debug, Clone)]
pub struct EStep {
    pub responsibilities: Responsibilities,
    /// `sum_n w_n ln sum_j a_j N(x_n | mu_j, Sigma_j)` in the points' frame.
    pub loglik: f64,
    /// Components whose covariance failed Cholesky even after repair; they
    /// get zero responsibility.
    pub failed: Vec<usize>,
}

/// Responsibilities and weighted log-likelihood, computed in the log domain
/// with per-point max subtraction. The model's components and the points
/// must be in the same frame; the model's map is not applied.
///
/// A covariance that fails Cholesky is repaired for this evaluation (see
/// [`repair_covariance`]).
pub fn e_step(model: &GmmModel, points: &WeightedPoints) -> Result<EStep, FitError> {
    e_step_with(model, points, Execution::default())
}

pub fn e_step_with(model: &GmmModel, points: &WeightedPoints, exec: Execution) -> Result<EStep, FitError> {
    if model.dimension() != points.dim() {
        return Err(FitError::DimensionMismatch {
            expected: points.dim(),
            got: model.dimension(),
        });
    }
    let repaired;
    let model = if model.components().iter().any(|c| c.covariance.cholesky().is_none()) {
        let comps = model
            .components()
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if let Ok(r) = repair_covariance(&c.covariance) {
                    c.covariance = r.matrix;
                }
                c
            })
            .collect();
        repaired = GmmModel::from_parts_unchecked(comps, model.normalization().clone());
        &repaired
    } else {
        model
    };

    let eval = Evaluator::new(model);
    let failed = eval.failed_components();
    if failed.len() == model.len() {
        return Err(FitError::AllComponentsFailed);
    }
    let m = model.len();
    let d = points.dim();
    let coords = points.coords();
    let mut values = vec![0.0; points.len() * m];
    let partials = exec::zip_chunks_mut(exec, points.weights(), &mut values, REDUCTION_CHUNK, m, |ci, w, gamma| {
        let first = ci * REDUCTION_CHUNK;
        let mut ll = 0.0;
        for (k, (wn, g)) in w.iter().zip(gamma.chunks_exact_mut(m)).enumerate() {
            let n = first + k;
            eval.component_log_terms(&coords[n * d..(n + 1) * d], g);
            let mx = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in g.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in g.iter_mut() {
                *v /= sum;
            }
            let lp = mx + sum.ln();
            if *wn > 0.0 {
                ll += wn * lp;
            }
        }
        ll
    });
    let loglik = exec::tree_reduce(partials, |a, b| a + b).unwrap_or(0.0);
    if !loglik.is_finite() {
        return Err(FitError::NonFiniteLikelihood);
    }
    Ok(EStep {
        responsibilities: Responsibilities {
            components: m,
            points: points.len(),
            values,
        },
        loglik,
        failed,
    })
}

/// Output of [`m_step`].
#[derive(Debug, Clone)]
pub struct MStep {
    pub components: Vec<GaussianComponent>,
    /// Components whose effective mass fell below the floor; they keep their
    /// previous mean and covariance.
    pub starved: Vec<usize>,
}

/// Relative effective-mass floor below which a component keeps its previous
/// parameters.
pub const STARVED_MASS_FRACTION: f64 = 1e-14;

/// Weighted M-step:
/// `a_i = sum w g / sum w`, `mu_i = sum w g x / sum w g`, and
/// `Sigma_i = sum w g (x - mu_i)(x - mu_i)^T / sum w g` using the updated
/// means. `previous` supplies the fallback parameters of starved components.
pub fn m_step(
    points: &WeightedPoints,
    resp: &Responsibilities,
    previous: &[GaussianComponent],
) -> Result<MStep, FitError> {
    m_step_with(points, resp, previous, Execution::default())
}

pub fn m_step_with(
    points: &WeightedPoints,
    resp: &Responsibilities,
    previous: &[GaussianComponent],
    exec: Execution,
) -> Result<MStep, FitError> {
    let m = resp.components;
    let d = points.dim();
    if resp.points != points.len() || previous.len() != m {
        return Err(FitError::InvalidData("responsibility shape mismatch".into()));
    }
    let coords = points.coords();
    let weights = points.weights();
    let sum_vecs = |mut a: Vec<f64>, b: Vec<f64>| {
        a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
        a
    };

    // Pass 1: effective mass and first moment per component.
    let stride1 = 1 + d;
    let partials = exec::map_chunks(exec, weights, REDUCTION_CHUNK, |ci, w| {
        let first = ci * REDUCTION_CHUNK;
        let mut acc = vec![0.0; m * stride1];
        for (k, &wn) in w.iter().enumerate() {
            if wn == 0.0 {
                continue;
            }
            let n = first + k;
            let x = &coords[n * d..(n + 1) * d];
            for i in 0..m {
                let wg = wn * resp.values[n * m + i];
                let a = &mut acc[i * stride1..(i + 1) * stride1];
                a[0] += wg;
                for (s, xa) in a[1..].iter_mut().zip(x) {
                    *s += wg * xa;
                }
            }
        }
        acc
    });
    let first = exec::tree_reduce(partials, sum_vecs).unwrap_or_else(|| vec![0.0; m * stride1]);

    let total = points.total_weight();
    let floor = STARVED_MASS_FRACTION * total;
    let mass: Vec<f64> = (0..m).map(|i| first[i * stride1]).collect();
    let total_mass: f64 = mass.iter().sum();
    if !(total_mass > 0.0) {
        return Err(FitError::ZeroResponsibilityMass);
    }
    let mut starved = Vec::new();
    let means: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            if mass[i] < floor {
                starved.push(i);
                previous[i].mean.clone()
            } else {
                first[i * stride1 + 1..(i + 1) * stride1]
                    .iter()
                    .map(|s| s / mass[i])
                    .collect()
            }
        })
        .collect();

    // Pass 2: scatter about the new means.
    let p = packed_len(d);
    let partials = exec::map_chunks(exec, weights, REDUCTION_CHUNK, |ci, w| {
        let first = ci * REDUCTION_CHUNK;
        let mut acc = vec![0.0; m * p];
        let mut diff = [0.0f64; 8];
        for (k, &wn) in w.iter().enumerate() {
            if wn == 0.0 {
                continue;
            }
            let n = first + k;
            let x = &coords[n * d..(n + 1) * d];
            for i in 0..m {
                let wg = wn * resp.values[n * m + i];
                for a in 0..d {
                    diff[a] = x[a] - means[i][a];
                }
                let s = &mut acc[i * p..(i + 1) * p];
                let mut idx = 0;
                for a in 0..d {
                    for b in a..d {
                        s[idx] += wg * diff[a] * diff[b];
                        idx += 1;
                    }
                }
            }
        }
        acc
    });
    let second = exec::tree_reduce(partials, sum_vecs).unwrap_or_else(|| vec![0.0; m * p]);

    let components = (0..m)
        .map(|i| {
            let covariance = if mass[i] < floor {
                previous[i].covariance.clone()
            } else {
                let packed = second[i * p..(i + 1) * p].iter().map(|s| s / mass[i]).collect();
                SymMatrix::from_packed(d, packed).expect("packed length")
            };
            GaussianComponent {
                weight: mass[i] / total,
                mean: means[i].clone(),
                covariance,
            }
        })
        .collect();
    Ok(MStep { components, starved })
}

/// Why a component was removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneReason {
    LowWeight,
    RepairFailed,
}

/// A single component removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    /// 1-indexed EM iteration after whose M-step the removal happened.
    pub iteration: usize,
    /// Index of the removed component in the list before removal.
    pub component: usize,
    pub weight: f64,
    pub reason: PruneReason,
}

/// Removes component `index` and rescales the remaining weights to sum to 1.
pub(crate) fn remove_component(components: &mut Vec<GaussianComponent>, index: usize) -> GaussianComponent {
    let removed = components.remove(index);
    let rest: f64 = components.iter().map(|c| c.weight).sum();
    if rest > 0.0 {
        for c in components.iter_mut() {
            c.weight /= rest;
        }
    }
    removed
}

/// If any weight is strictly below `threshold`, removes the single lightest
/// component (lowest index on ties) and rescales the rest. A one-component
/// list is never pruned. Returns the removed index and weight.
pub(crate) fn prune_components(components: &mut Vec<GaussianComponent>, threshold: f64) -> Option<(usize, f64)> {
    if components.len() <= 1 {
        return None;
    }
    let (idx, w) = components
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c.weight))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    if !(w < threshold) {
        return None;
    }
    remove_component(components, idx);
    Some((idx, w))
}

/// Model-level pruning: see [`prune_components`]. Returns the (possibly
/// unchanged) model and the removed `(index, weight)`.
pub fn prune(model: &GmmModel, threshold: f64) -> (GmmModel, Option<(usize, f64)>) {
    let mut comps = model.components().to_vec();
    let removed = prune_components(&mut comps, threshold);
    (
        GmmModel::from_parts_unchecked(comps, model.normalization().clone()),
        removed,
    )
}

/// Result of [`repair_covariance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Repaired {
    pub matrix: SymMatrix,
    /// Diagonal loading added (0 when the input was already SPD).
    pub loading: f64,
    /// Number of times the loading was doubled before Cholesky succeeded.
    pub doublings: u32,
}

/// Maximum number of loading doublings attempted.
pub const MAX_REPAIR_DOUBLINGS: u32 = 60;

/// Returns an SPD matrix: the input if Cholesky succeeds, otherwise
/// `Sigma + lambda I` with `lambda = 1e-8 * trace / d` (or a magnitude
/// fallback when the trace is not positive), doubled until Cholesky
/// succeeds. Off-diagonal entries are never changed.
pub fn repair_covariance(sigma: &SymMatrix) -> Result<Repaired, FitError> {
    if !sigma.is_finite() {
        return Err(FitError::RepairFailed);
    }
    if sigma.cholesky().is_some() {
        return Ok(Repaired {
            matrix: sigma.clone(),
            loading: 0.0,
            doublings: 0,
        });
    }
    let d = sigma.dim();
    let trace = sigma.trace();
    let magnitude = sigma.packed().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if trace > 0.0 {
        trace / d as f64
    } else if magnitude > 0.0 {
        magnitude
    } else {
        1.0
    };
    let mut lambda = 1e-8 * scale;
    for k in 0..=MAX_REPAIR_DOUBLINGS {
        let candidate = sigma.add_diagonal(lambda);
        if candidate.cholesky().is_some() {
            return Ok(Repaired {
                matrix: candidate,
                loading: lambda,
                doublings: k,
            });
        }
        lambda *= 2.0;
    }
    Err(FitError::RepairFailed)
}
