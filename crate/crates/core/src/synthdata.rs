//! Reproducible synthetic particle velocity populations.
//!
//! Samples are drawn from a Gaussian mixture. The random stream is ChaCha8
//! (`rand_chacha::ChaCha8Rng`), seeded with `seed_from_u64(seed)`; particles
//! are produced in blocks of [`GENERATION_BLOCK`], block `b` using stream id
//! `b` of that generator. Within a particle the draws are, in order:
//!
//! 1. one uniform `u` in `[0, 1)` choosing the component by cumulative
//!    fraction (`u < c_0` picks component 0, and so on),
//! 2. `ceil(d / 2)` Box–Muller pairs, each consuming two uniforms
//!    `u1, u2` and producing `sqrt(-2 ln(1 - u1)) * (cos 2πu2, sin 2πu2)`;
//!    the trailing sine value is discarded when `d` is odd.
//!
//! Uniforms are `(next_u64 >> 11) * 2^-53`. The sample is `mean + L z`
//! with `L` the lower Cholesky factor of the component covariance. Because
//! block boundaries are fixed, output is bit-identical for a given spec
//! regardless of thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::linalg::SymMatrix;

/// Particles per independently seeded generation block.
pub const GENERATION_BLOCK: usize = 1 << 14;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("fractions must sum to 1 (got {0})")]
    FractionSum(f64),
    #[error("component {component}: fraction must be in (0, 1], got {fraction}")]
    BadFraction { component: usize, fraction: f64 },
    #[error("component {component}: covariance is not symmetric positive definite")]
    NotSpd { component: usize },
    #[error("component {component}: {what} has length {got}, expected {expected}")]
    Shape {
        component: usize,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("particle_count must be at least 1")]
    NoParticles,
    #[error("scenario has no components")]
    NoComponents,
    #[error("unknown preset '{name}'; valid presets: {}", PRESET_NAMES.join(", "))]
    UnknownPreset { name: String },
    #[error("invalid particle set: {0}")]
    InvalidParticles(String),
}

/// Covariance of one scenario component, as written in scenario JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// Per-axis variances.
    Diagonal(Vec<f64>),
    /// Full row-major `d x d` matrix; symmetrized on use.
    Full(Vec<Vec<f64>>),
}

impl CovarianceSpec {
    fn to_matrix(&self, dim: usize, component: usize) -> Result<SymMatrix, SynthError> {
        match self {
            CovarianceSpec::Diagonal(v) => {
                if v.len() != dim {
                    return Err(SynthError::Shape {
                        component,
                        what: "diagonal covariance",
                        got: v.len(),
                        expected: dim,
                    });
                }
                Ok(SymMatrix::from_diagonal(v))
            }
            CovarianceSpec::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(SynthError::Shape {
                        component,
                        what: "covariance rows",
                        got: rows.len(),
                        expected: dim,
                    });
                }
                let full: Vec<f64> = rows.iter().flatten().copied().collect();
                let sym = SymMatrix::from_full_symmetrized(dim, &full);
                let asym = (0..dim)
                    .flat_map(|i| (0..dim).map(move |j| (i, j)))
                    .any(|(i, j)| rows[i][j] != rows[j][i]);
                if asym {
                    return Err(SynthError::NotSpd { component });
                }
                Ok(sym)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComponent {
    pub fraction: f64,
    pub mean: Vec<f64>,
    pub covariance: CovarianceSpec,
}

/// A Gaussian-mixture velocity population to sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub components: Vec<ScenarioComponent>,
    pub particle_count: usize,
    pub seed: u64,
    pub dimension: usize,
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "synthetic".to_string()
}

/// Validated component ready for sampling.
#[derive(Debug, Clone)]
struct Prepared {
    cumulative: f64,
    mean: Vec<f64>,
    chol: crate::linalg::Cholesky,
}

impl ScenarioSpec {
    /// Checks every invariant and returns the component covariances.
    pub fn validate(&self) -> Result<Vec<SymMatrix>, SynthError> {
        if !(2..=3).contains(&self.dimension) {
            return Err(SynthError::Dimension(self.dimension));
        }
        if self.particle_count == 0 {
            return Err(SynthError::NoParticles);
        }
        if self.components.is_empty() {
            return Err(SynthError::NoComponents);
        }
        let mut covs = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            if !(c.fraction > 0.0 && c.fraction <= 1.0) {
                return Err(SynthError::BadFraction {
                    component: i,
                    fraction: c.fraction,
                });
            }
            if c.mean.len() != self.dimension {
                return Err(SynthError::Shape {
                    component: i,
                    what: "mean",
                    got: c.mean.len(),
                    expected: self.dimension,
                });
            }
            let cov = c.covariance.to_matrix(self.dimension, i)?;
            if cov.cholesky().is_none() {
                return Err(SynthError::NotSpd { component: i });
            }
            covs.push(cov);
        }
        let sum: f64 = self.components.iter().map(|c| c.fraction).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(SynthError::FractionSum(sum));
        }
        Ok(covs)
    }

    /// Mixture mean `sum f_i mu_i`.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dimension];
        for c in &self.components {
            for (a, v) in m.iter_mut().zip(&c.mean) {
                *a += c.fraction * v;
            }
        }
        m
    }

    /// Mixture covariance `sum f_i (S_i + mu_i mu_i^T) - mu mu^T`, row-major.
    pub fn mixture_covariance(&self) -> Result<Vec<f64>, SynthError> {
        let covs = self.validate()?;
        let d = self.dimension;
        let mean = self.mixture_mean();
        let mut out = vec![0.0; d * d];
        for (c, s) in self.components.iter().zip(&covs) {
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += c.fraction * (s.get(i, j) + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] -= mean[i] * mean[j];
            }
        }
        Ok(out)
    }

    /// Returns a copy with component `index`'s mean shifted by `delta`.
    pub fn with_shifted_mean(&self, index: usize, delta: &[f64]) -> Self {
        let mut s = self.clone();
        if let Some(c) = s.components.get_mut(index) {
            for (m, d) in c.mean.iter_mut().zip(delta) {
                *m += d;
            }
        }
        s
    }
}

/// Raw particle velocities: the uncompressed ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    dimension: usize,
    /// Flat `n * d` row-major velocities.
    velocities: Vec<f64>,
    weights: Option<Vec<f64>>,
    species_label: String,
    nominal_temperature: Vec<f64>,
}

impl ParticleSet {
    pub fn new(
        dimension: usize,
        velocities: Vec<f64>,
        weights: Option<Vec<f64>>,
        species_label: impl Into<String>,
        nominal_temperature: Vec<f64>,
    ) -> Result<Self, SynthError> {
        if !(2..=3).contains(&dimension) {
            return Err(SynthError::Dimension(dimension));
        }
        if velocities.len() % dimension != 0 {
            return Err(SynthError::InvalidParticles(format!(
                "{} velocity values is not a multiple of dimension {dimension}",
                velocities.len()
            )));
        }
        let n = velocities.len() / dimension;
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(SynthError::InvalidParticles(format!(
                    "{} weights for {n} particles",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(SynthError::InvalidParticles(
                    "particle weights must be positive and finite".into(),
                ));
            }
        }
        if nominal_temperature.len() != dimension
            || nominal_temperature.iter().any(|&t| !(t > 0.0))
        {
            return Err(SynthError::InvalidParticles(
                "nominal temperature must be positive on every axis".into(),
            ));
        }
        Ok(Self {
            dimension,
            velocities,
            weights,
            species_label: species_label.into(),
            nominal_temperature,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.velocities.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn total_weight(&self) -> f64 {
        match &self.weights {
            Some(w) => exec::deterministic_sum(w),
            None => self.len() as f64,
        }
    }

    pub fn species_label(&self) -> &str {
        &self.species_label
    }

    pub fn nominal_temperature(&self) -> &[f64] {
        &self.nominal_temperature
    }

    /// Selects a subset of particles by index, keeping labels and temperature.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dimension;
        let mut v = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            v.extend_from_slice(self.velocity(i));
        }
        let weights = self
            .weights
            .as_ref()
            .map(|w| indices.iter().map(|&i| w[i]).collect());
        Self {
            dimension: d,
            velocities: v,
            weights,
            species_label: self.species_label.clone(),
            nominal_temperature: self.nominal_temperature.clone(),
        }
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits of one `next_u64`.
#[inline]
pub(crate) fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn fill_standard_normals(rng: &mut ChaCha8Rng, z: &mut [f64]) {
    let mut i = 0;
    while i < z.len() {
        let u1 = uniform01(rng);
        let u2 = uniform01(rng);
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        z[i] = r * theta.cos();
        if i + 1 < z.len() {
            z[i + 1] = r * theta.sin();
        }
        i += 2;
    }
}

/// Samples `spec.particle_count` velocities from the scenario mixture.
pub fn generate(spec: &ScenarioSpec) -> Result<ParticleSet, SynthError> {
    generate_with(spec, Execution::default())
}

pub fn generate_with(spec: &ScenarioSpec, exec: Execution) -> Result<ParticleSet, SynthError> {
    let covs = spec.validate()?;
    let d = spec.dimension;
    let mut acc = 0.0;
    let prepared: Vec<Prepared> = spec
        .components
        .iter()
        .zip(&covs)
        .map(|(c, s)| {
            acc += c.fraction;
            Prepared {
                cumulative: acc,
                mean: c.mean.clone(),
                chol: s.cholesky().expect("validated SPD"),
            }
        })
        .collect();

    let mut velocities = vec![0.0; spec.particle_count * d];
    let block_len = GENERATION_BLOCK * d;
    exec::for_each_chunk_mut(exec, &mut velocities, block_len, |block, out| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(block as u64);
        let mut z = [0.0f64; 4];
        let mut x = [0.0f64; 4];
        for v in out.chunks_mut(d) {
            let u = uniform01(&mut rng);
            let comp = prepared
                .iter()
                .find(|p| u < p.cumulative)
                .unwrap_or_else(|| prepared.last().expect("non-empty"));
            fill_standard_normals(&mut rng, &mut z[..d]);
            comp.chol.mul_lower(&z[..d], &mut x[..d]);
            for a in 0..d {
                v[a] = comp.mean[a] + x[a];
            }
        }
    });

    // Kinetic temperature: the full per-axis variance of the population,
    // drift spread included.
    let cov = spec.mixture_covariance()?;
    let nominal_temperature = (0..d).map(|a| cov[a * d + a]).collect();

    ParticleSet::new(d, velocities, None, spec.label.clone(), nominal_temperature)
}

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 5] = [
    "maxwellian",
    "drifting-beam",
    "counter-streaming",
    "bump-on-tail",
    "hot-core-cold-halo",
];

/// One row of the preset table: `(fraction, mean_u, variance_u, variance_perp)`.
/// Means on the perpendicular axes are zero; covariances are diagonal with
/// `variance_u` on the first axis and `variance_perp` on the others.
type PresetRow = (f64, f64, f64, f64);

/// The frozen preset parameter table (mirrored in `docs/PRESETS.md`).
const PRESET_TABLE: [(&str, &[PresetRow]); 5] = [
    ("maxwellian", &[(1.0, 0.0, 1.0, 1.0)]),
    ("drifting-beam", &[(0.8, 0.0, 1.0, 1.0), (0.2, 3.0, 0.5, 0.5)]),
    ("counter-streaming", &[(0.5, -3.0, 1.0, 1.0), (0.5, 3.0, 1.0, 1.0)]),
    ("bump-on-tail", &[(0.9, 0.0, 1.0, 1.0), (0.1, 4.0, 0.25, 1.0)]),
    ("hot-core-cold-halo", &[(0.6, 0.0, 1.5, 1.5), (0.4, 0.0, 0.25, 0.25)]),
];

/// 2D preset scenario.
pub fn preset(name: &str, particle_count: usize, seed: u64) -> Result<ScenarioSpec, SynthError> {
    preset_with_dimension(name, particle_count, seed, 2)
}

pub fn preset_with_dimension(
    name: &str,
    particle_count: usize,
    seed: u64,
    dimension: usize,
) -> Result<ScenarioSpec, SynthError> {
    if !(2..=3).contains(&dimension) {
        return Err(SynthError::Dimension(dimension));
    }
    let rows = PRESET_TABLE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, rows)| *rows)
        .ok_or_else(|| SynthError::UnknownPreset { name: name.into() })?;
    let components = rows
        .iter()
        .map(|&(fraction, mean_u, var_u, var_perp)| {
            let mut mean = vec![0.0; dimension];
            mean[0] = mean_u;
            let mut var = vec![var_perp; dimension];
            var[0] = var_u;
            ScenarioComponent {
                fraction,
                mean,
                covariance: CovarianceSpec::Diagonal(var),
            }
        })
        .collect();
    Ok(ScenarioSpec {
        components,
        particle_count,
        seed,
        dimension,
        label: name.to_string(),
    })
}
