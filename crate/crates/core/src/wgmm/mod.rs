//! Weighted Gaussian mixture fitting by expectation–maximization.
//!
//! Each observation `x_n` carries a weight `w_n` (a histogram bin count).
//! With all weights equal the updates reduce to ordinary EM. The fit runs
//! in a frame where the data's bounding box is `[-1, 1]^d`, prunes the
//! lightest component every `prune_check_interval` iterations when its
//! weight is below `prune_threshold`, and keeps every covariance SPD by
//! diagonal loading.
//!
//! The weighted M-step conserves the weighted mean and second moment of the
//! data exactly at every iteration (up to rounding), which the tests check
//! per iteration.

mod em;
mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::histogram::WeightedPoints;

pub use em::{
    e_step, e_step_with, init_model, m_step, m_step_with, normalize, prune, repair_covariance, EStep, MStep,
    PruneEvent, PruneReason, Repaired, Responsibilities, MAX_REPAIR_DOUBLINGS, STARVED_MASS_FRACTION,
};
pub use model::{
    denormalize_model, evaluate_pdf, evaluate_pdf_grid, evaluate_pdf_with, into_frame, mixture_moments, AffineMap,
    GaussianComponent, GmmModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("degenerate data: axis {axis} has zero spread")]
    DegenerateAxis { axis: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("component {component}: covariance is not positive definite")]
    NotSpd { component: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance repair failed after maximum diagonal loading")]
    RepairFailed,
    #[error("every component has a singular covariance")]
    AllComponentsFailed,
    #[error("log-likelihood is not finite")]
    NonFiniteLikelihood,
    #[error("total responsibility mass is zero")]
    ZeroResponsibilityMass,
}

/// Fit parameters. Defaults: 12 initial components, at most 100 EM
/// iterations, prune below weight 0.005 every 10 iterations, stop when the
/// relative log-likelihood change drops below 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub initial_components: usize,
    pub max_em_iterations: usize,
    pub prune_threshold: f64,
    pub prune_check_interval: usize,
    /// Pruning can be switched off to keep a fixed component count.
    pub pruning: bool,
    /// Relative log-likelihood change for early stopping; 0 disables it.
    pub loglik_rel_tolerance: f64,
    pub seed: u64,
    /// Per-axis variance (data units) for cold-start covariances. When
    /// absent, the weighted variance of the data is used.
    pub initial_variance: Option<Vec<f64>>,
    #[serde(skip)]
    pub warm_start: Option<GmmModel>,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            initial_components: 12,
            max_em_iterations: 100,
            prune_threshold: 0.005,
            prune_check_interval: 10,
            pruning: true,
            loglik_rel_tolerance: 1e-6,
            seed: 0,
            initial_variance: None,
            warm_start: None,
            execution: Execution::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.to_string()));
        if self.initial_components == 0 {
            return bad("initial_components must be positive");
        }
        if self.max_em_iterations == 0 {
            return bad("max_em_iterations must be positive");
        }
        if self.prune_check_interval == 0 {
            return bad("prune_check_interval must be positive");
        }
        if !(self.loglik_rel_tolerance >= 0.0) {
            return bad("loglik_rel_tolerance must be non-negative");
        }
        if self.pruning {
            if !(self.prune_threshold > 0.0) {
                return bad("prune_threshold must be positive");
            }
            if self.prune_threshold >= 1.0 / self.initial_components as f64 {
                return bad("prune_threshold must be below 1 / initial_components");
            }
        }
        Ok(())
    }
}

/// Diagonal loading applied during a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairEvent {
    pub iteration: usize,
    pub component: usize,
    pub loading: f64,
}

/// Fitted model plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Model in data space (identity normalization).
    pub model: GmmModel,
    /// Data-space weighted log-likelihood at the start of each iteration.
    pub loglik_trace: Vec<f64>,
    /// Data-space weighted log-likelihood of the returned model.
    pub final_loglik: f64,
    pub iterations_used: usize,
    pub pruning_events: Vec<PruneEvent>,
    pub repair_events: Vec<RepairEvent>,
    pub converged: bool,
    /// Component count the iteration started with.
    pub initial_components: usize,
    /// The frame the fit ran in.
    pub normalization: AffineMap,
    pub warnings: Vec<String>,
}

/// Weighted variance per axis, used when no species temperature is given.
fn data_variance(points: &WeightedPoints) -> Vec<f64> {
    let d = points.dim();
    let (mean, second) = points.moments();
    (0..d)
        .map(|a| (second[a * d + a] - mean[a] * mean[a]).max(f64::MIN_POSITIVE))
        .collect()
}

/// State handed to a [`fit_observed`] observer right after each M-step,
/// before covariance repair and pruning.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    /// Data-space log-likelihood from this iteration's E-step.
    pub loglik: f64,
    /// Components in the fitting frame.
    pub components: &'a [GaussianComponent],
    pub normalization: &'a AffineMap,
}

impl IterationView<'_> {
    /// The current mixture mapped back to data space.
    pub fn data_model(&self) -> GmmModel {
        denormalize_model(&GmmModel::from_parts_unchecked(
            self.components.to_vec(),
            self.normalization.clone(),
        ))
    }
}

/// Runs normalize, initialize, then EM iterations with periodic pruning
/// until the relative log-likelihood change falls below tolerance or the
/// iteration cap is reached. Returns a data-space model.
pub fn fit(points: &WeightedPoints, config: &FitConfig) -> Result<FitResult, FitError> {
    fit_observed(points, config, |_| {})
}

/// [`fit`] with a callback invoked after every M-step.
pub fn fit_observed<F>(points: &WeightedPoints, config: &FitConfig, mut observer: F) -> Result<FitResult, FitError>
where
    F: FnMut(&IterationView<'_>),
{
    config.validate()?;
    let exec = config.execution;
    let (norm, map) = normalize(points)?;
    let temperature = match &config.initial_variance {
        Some(t) => t.clone(),
        None => data_variance(points),
    };

    let mut warnings = Vec::new();
    if config.warm_start.is_none() {
        let m = em::effective_components(&norm, config.initial_components);
        if m < config.initial_components {
            let msg = format!(
                "only {m} distinct data points; reducing initial components from {}",
                config.initial_components
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let init = init_model(&norm, &map, config, &temperature)?;
    let initial_components = init.len();
    let mut components = init.into_components();

    let total = norm.total_weight();
    let ll_offset = total * map.log_jacobian();
    let mut trace: Vec<f64> = Vec::with_capacity(config.max_em_iterations);
    let mut pruning_events = Vec::new();
    let mut repair_events = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut changed_structure = false;

    for t in 1..=config.max_em_iterations {
        iterations = t;
        let state = model::GmmModel::from_parts_unchecked(components, map.clone());
        let e = e_step_with(&state, &norm, exec)?;
        components = state.into_components();
        let ll = e.loglik + ll_offset;

        let mut structure_change = false;
        // Components that cannot be factorized even after loading get
        // pruned immediately, before the M-step.
        for &i in e.failed.iter().rev() {
            let removed = em::remove_component(&mut components, i);
            pruning_events.push(PruneEvent {
                iteration: t,
                component: i,
                weight: removed.weight,
                reason: PruneReason::RepairFailed,
            });
            structure_change = true;
        }
        let resp = if e.failed.is_empty() {
            e.responsibilities
        } else {
            // Drop the zero responsibility columns of the removed components.
            let m_old = e.responsibilities.components();
            let keep: Vec<usize> = (0..m_old).filter(|i| !e.failed.contains(i)).collect();
            let mut vals = Vec::with_capacity(keep.len() * norm.len());
            for n in 0..norm.len() {
                let col = e.responsibilities.column(n);
                vals.extend(keep.iter().map(|&i| col[i]));
            }
            Responsibilities::from_point_major(keep.len(), vals)?
        };

        let mstep = m_step_with(&norm, &resp, &components, exec)?;
        components = mstep.components;
        observer(&IterationView {
            iteration: t,
            loglik: ll,
            components: &components,
            normalization: &map,
        });
        let mut unrepairable = Vec::new();
        for (i, c) in components.iter_mut().enumerate() {
            match repair_covariance(&c.covariance) {
                Ok(r) if r.loading > 0.0 => {
                    repair_events.push(RepairEvent {
                        iteration: t,
                        component: i,
                        loading: r.loading,
                    });
                    c.covariance = r.matrix;
                }
                Ok(_) => {}
                Err(_) => unrepairable.push(i),
            }
        }
        for &i in unrepairable.iter().rev() {
            if components.len() == 1 {
                return Err(FitError::RepairFailed);
            }
            let removed = em::remove_component(&mut components, i);
            pruning_events.push(PruneEvent {
                iteration: t,
                component: i,
                weight: removed.weight,
                reason: PruneReason::RepairFailed,
            });
            structure_change = true;
        }

        // No M-step follows the last iteration, so pruning there would only
        // leave an unconserved model behind.
        if config.pruning && t % config.prune_check_interval == 0 && t < config.max_em_iterations {
            if let Some((i, w)) = em::prune_components(&mut components, config.prune_threshold) {
                pruning_events.push(PruneEvent {
                    iteration: t,
                    component: i,
                    weight: w,
                    reason: PruneReason::LowWeight,
                });
                structure_change = true;
            }
        }

        let comparable = !changed_structure && !structure_change;
        if let (Some(&prev), true) = (trace.last(), comparable) {
            let rel = (ll - prev).abs() / ll.abs().max(f64::MIN_POSITIVE);
            trace.push(ll);
            if rel < config.loglik_rel_tolerance {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        changed_structure = structure_change;
    }

    // Weight-zero components can only come from an empty effective mass;
    // drop them so every returned weight lies in (0, 1].
    while let Some(i) = components.iter().position(|c| c.weight <= 0.0) {
        if components.len() == 1 {
            break;
        }
        let removed = em::remove_component(&mut components, i);
        pruning_events.push(PruneEvent {
            iteration: iterations,
            component: i,
            weight: removed.weight,
            reason: PruneReason::LowWeight,
        });
    }

    let normalized = GmmModel::from_parts_unchecked(components, map.clone());
    let final_loglik = e_step_with(&normalized, &norm, exec)?.loglik + ll_offset;
    let model = denormalize_model(&normalized);

    Ok(FitResult {
        model,
        loglik_trace: trace,
        final_loglik,
        iterations_used: iterations,
        pruning_events,
        repair_events,
        converged,
        initial_components,
        normalization: map,
        warnings,
    })
}
