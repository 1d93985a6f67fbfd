use std::path::PathBuf;

use serde::Serialize;

use vdf_gmm::codec::encode_model;
use vdf_gmm::histogram::to_pdf;
use vdf_gmm::metrics::jsd;
use vdf_gmm::synthdata::generate_with;
use vdf_gmm::wgmm::evaluate_pdf_grid;
use vdf_gmm::GmmModel;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{write_file, write_report, CsvRow};
use crate::pipeline::{bin_and_fit, model_meta};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeseriesRow {
    /// Synthetic cycle the fit belongs to.
    pub cycle: u64,
    /// Offset of the drifting component's mean on the first axis.
    pub mean_shift: f64,
    pub warm_started: bool,
    pub iterations: usize,
    pub converged: bool,
    pub initial_components: usize,
    pub components: usize,
    pub final_loglik: f64,
    pub jsd: f64,
    /// Components removed during this fit.
    pub pruned: usize,
}

impl CsvRow for TimeseriesRow {
    fn header() -> String {
        "cycle,mean_shift,warm_started,iterations,converged,initial_components,components,final_loglik,jsd,pruned".into()
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.cycle,
            self.mean_shift,
            self.warm_started,
            self.iterations,
            self.converged,
            self.initial_components,
            self.components,
            self.final_loglik,
            self.jsd,
            self.pruned
        )
    }
}

#[derive(Debug)]
pub struct TimeseriesOutput {
    pub rows: Vec<TimeseriesRow>,
    pub models: Vec<GmmModel>,
}

/// Fits a sequence of slowly drifting datasets. Every `da_interval`
/// synthetic cycles the drifting component's mean has moved by
/// `drift * cycle` on the first axis; each fit starts from the previous
/// model unless warm starts are off. Every cycle is sampled with the same
/// seed, so zero drift gives identical data each cycle.
pub fn run_timeseries(cfg: &PipelineConfig) -> Result<TimeseriesOutput, CliError> {
    cfg.validate()?;
    if cfg.input.is_some() {
        return Err(CliError::usage("timeseries needs a scenario, not a particle file"));
    }
    let spec = cfg.scenario_spec()?;
    let ts = &cfg.timeseries;
    let component = ts.drift_component.unwrap_or(spec.components.len() - 1);
    if component >= spec.components.len() {
        return Err(CliError::usage(format!(
            "drift_component {component} out of range for {} scenario components",
            spec.components.len()
        )));
    }
    let plane = cfg.planes(spec.dimension)?[0];

    let mut ranges = None;
    let mut prev: Option<GmmModel> = None;
    let mut out = TimeseriesOutput {
        rows: Vec::new(),
        models: Vec::new(),
    };
    for k in 0..ts.cycles {
        let cycle = (k * ts.da_interval) as u64;
        let shift = ts.drift * cycle as f64;
        let mut delta = vec![0.0; spec.dimension];
        delta[0] = shift;
        let particles = generate_with(&spec.with_shifted_mean(component, &delta), cfg.execution)?;
        // Fixed range for the whole series, taken from the first cycle.
        let r = match ranges {
            Some(r) => r,
            None => *ranges.insert(cfg.ranges(&particles, plane)?),
        };
        let warm = if ts.warm_start { prev.take() } else { None };
        let warm_started = warm.is_some();
        let (hist, res) = bin_and_fit(cfg, &particles, plane, r, warm)?;
        let grid = evaluate_pdf_grid(&res.model, cfg.bins, r)?;
        let row = TimeseriesRow {
            cycle,
            mean_shift: shift,
            warm_started,
            iterations: res.iterations_used,
            converged: res.converged,
            initial_components: res.initial_components,
            components: res.model.len(),
            final_loglik: res.final_loglik,
            jsd: jsd(&grid, &to_pdf(&hist)?)?,
            pruned: res.pruning_events.len(),
        };
        log::info!("cycle {cycle}: {} iterations, M={}", row.iterations, row.components);
        let path: PathBuf = cfg.out.join(format!("model_{plane}_c{cycle}.gmmc"));
        write_file(&path, &encode_model(&res.model, &model_meta(&particles, plane, r, cycle))?)?;
        out.rows.push(row);
        out.models.push(res.model.clone());
        prev = Some(res.model);
    }
    write_report(&cfg.out, "timeseries", cfg.format, &out.rows)?;
    Ok(out)
}
