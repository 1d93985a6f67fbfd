use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use vdf_gmm::codec::{encode_histogram, encode_model, encode_model_json, ModelMeta};
use vdf_gmm::exec::map_items;
use vdf_gmm::histogram::{bin_particles_with, to_weighted_points};
use vdf_gmm::metrics::plane_report;
use vdf_gmm::wgmm::{AffineMap, PruneEvent, RepairEvent};
use vdf_gmm::{fit, AxisRange, FitResult, GmmModel, Histogram2D, MetricsReport, ParticleSet, Plane};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::io::{opt, write_file, write_json, write_report, CsvRow};

/// RNG stream reserved for the subdomain split, distinct from the
/// sampling streams.
const SUBDOMAIN_STREAM: u64 = u64::MAX - 1;

/// Randomly assigns every particle to one of `k` subdomains.
pub fn split_subdomains(particles: &ParticleSet, k: usize, seed: u64) -> Vec<ParticleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBDOMAIN_STREAM);
    let mut parts = vec![Vec::new(); k];
    for i in 0..particles.len() {
        parts[(rng.next_u64() % k as u64) as usize].push(i);
    }
    parts.iter().map(|ix| particles.subset(ix)).collect()
}

/// One fitted histogram.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub plane: Plane,
    pub subdomain: Option<usize>,
    pub ranges: [AxisRange; 2],
    pub histogram: Histogram2D,
    pub result: FitResult,
    pub report: MetricsReport,
}

impl PlaneFit {
    /// File-name stem: `uv`, or `uv_s2` for subdomain 2.
    pub fn stem(&self) -> String {
        match self.subdomain {
            Some(s) => format!("{}_s{s}", self.plane),
            None => self.plane.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub particles: ParticleSet,
    /// The split, when more than one subdomain was requested.
    pub subdomains: Vec<ParticleSet>,
    pub fits: Vec<PlaneFit>,
    pub artifacts: Vec<PathBuf>,
}

impl PipelineOutput {
    /// The particles a fit was made from.
    pub fn particles_of(&self, f: &PlaneFit) -> &ParticleSet {
        match f.subdomain {
            Some(s) => &self.subdomains[s],
            None => &self.particles,
        }
    }
}

/// Bins one plane and fits it, optionally warm-started.
pub fn bin_and_fit(
    cfg: &PipelineConfig,
    particles: &ParticleSet,
    plane: Plane,
    ranges: [AxisRange; 2],
    warm_start: Option<GmmModel>,
) -> Result<(Histogram2D, FitResult), CliError> {
    let hist = bin_particles_with(particles, plane, cfg.bins, ranges, cfg.execution)?;
    let points = to_weighted_points(&hist, cfg.drop_empty)?;
    let (a, b) = plane.axes();
    let t = particles.nominal_temperature();
    let mut fc = cfg.fit_config(vec![t[a], t[b]]);
    fc.warm_start = warm_start;
    let res = fit(&points, &fc)?;
    Ok((hist, res))
}

pub fn model_meta(particles: &ParticleSet, plane: Plane, ranges: [AxisRange; 2], cycle: u64) -> ModelMeta {
    ModelMeta {
        plane: Some(plane),
        axis_ranges: ranges.to_vec(),
        species: particles.species_label().to_string(),
        cycle,
    }
}

/// Fits every requested plane (and subdomain) concurrently; results come
/// back in plane-major, subdomain-minor order.
pub fn fit_all(
    cfg: &PipelineConfig,
    particles: &ParticleSet,
    subdomains: &[ParticleSet],
) -> Result<Vec<PlaneFit>, CliError> {
    let planes = cfg.planes(particles.dimension())?;
    let mut jobs = Vec::new();
    for &plane in &planes {
        let ranges = cfg.ranges(particles, plane)?;
        if subdomains.is_empty() {
            jobs.push((plane, None, ranges));
        } else {
            jobs.extend((0..subdomains.len()).map(|s| (plane, Some(s), ranges)));
        }
    }
    let results = map_items(cfg.execution, &jobs, |&(plane, sub, ranges)| {
        let p = sub.map_or(particles, |s| &subdomains[s]);
        let (histogram, result) = bin_and_fit(cfg, p, plane, ranges, None)?;
        let mut report = plane_report(&result.model, &histogram, Some(p), cfg.reference_bins)?;
        report.iterations = Some(result.iterations_used);
        report.converged = Some(result.converged);
        log::info!(
            "plane {plane}{}: M={} after {} iterations, jsd {:.5}",
            sub.map(|s| format!(" subdomain {s}")).unwrap_or_default(),
            result.model.len(),
            result.iterations_used,
            report.jsd
        );
        Ok::<_, CliError>(PlaneFit {
            plane,
            subdomain: sub,
            ranges,
            histogram,
            result,
            report,
        })
    });
    results.into_iter().collect()
}

/// Fit diagnostics written next to each model.
#[derive(Debug, Serialize)]
pub struct FitSummary<'a> {
    pub plane: Plane,
    pub subdomain: Option<usize>,
    pub initial_components: usize,
    pub components: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
    pub loglik_trace: &'a [f64],
    pub pruning_events: &'a [PruneEvent],
    pub repair_events: &'a [RepairEvent],
    pub warnings: &'a [String],
    pub normalization: &'a AffineMap,
}

/// A metrics report tagged with its subdomain.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub subdomain: Option<usize>,
    #[serde(flatten)]
    pub report: MetricsReport,
}

impl CsvRow for MetricsRow {
    fn header() -> String {
        format!("subdomain,{}", MetricsReport::CSV_HEADER)
    }

    fn csv_row(&self) -> String {
        format!("{},{}", opt(self.subdomain), self.report.csv_row())
    }
}

/// Writes histogram, model and diagnostics files of one fit.
pub fn write_fit_artifacts(dir: &Path, f: &PlaneFit, particles: &ParticleSet) -> Result<Vec<PathBuf>, CliError> {
    let stem = f.stem();
    let (bytes, sidecar) = encode_histogram(&f.histogram);
    let meta = model_meta(particles, f.plane, f.ranges, 0);
    let files = [
        (format!("hist_{stem}.h2d"), bytes),
        (format!("hist_{stem}.h2d.json"), sidecar.to_json().into_bytes()),
        (format!("model_{stem}.gmmc"), encode_model(&f.result.model, &meta)?),
        (format!("model_{stem}.gmm.json"), encode_model_json(&f.result.model, &meta)?.into_bytes()),
    ];
    let mut out = Vec::new();
    for (name, data) in files {
        let path = dir.join(name);
        write_file(&path, &data)?;
        out.push(path);
    }
    let r = &f.result;
    let path = dir.join(format!("fit_{stem}.json"));
    write_json(
        &path,
        &FitSummary {
            plane: f.plane,
            subdomain: f.subdomain,
            initial_components: r.initial_components,
            components: r.model.len(),
            iterations: r.iterations_used,
            converged: r.converged,
            final_loglik: r.final_loglik,
            loglik_trace: &r.loglik_trace,
            pruning_events: &r.pruning_events,
            repair_events: &r.repair_events,
            warnings: &r.warnings,
            normalization: &r.normalization,
        },
    )?;
    out.push(path);
    Ok(out)
}

/// Ingest or generate, bin, fit, encode and score. Writes histograms,
/// models, fit diagnostics, the metrics report and the resolved config.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, CliError> {
    cfg.validate()?;
    let particles = cfg.load_particles()?;
    cfg.planes(particles.dimension())?;
    let subdomains = if cfg.subdomains > 1 {
        split_subdomains(&particles, cfg.subdomains, cfg.data_seed())
    } else {
        Vec::new()
    };
    let fits = fit_all(cfg, &particles, &subdomains)?;
    let mut out = PipelineOutput {
        particles,
        subdomains,
        fits,
        artifacts: Vec::new(),
    };

    let mut artifacts = Vec::new();
    for f in &out.fits {
        artifacts.extend(write_fit_artifacts(&cfg.out, f, out.particles_of(f))?);
    }
    let rows: Vec<MetricsRow> = out
        .fits
        .iter()
        .map(|f| MetricsRow {
            subdomain: f.subdomain,
            report: f.report.clone(),
        })
        .collect();
    artifacts.push(write_report(&cfg.out, "metrics", cfg.format, &rows)?);
    let path = cfg.out.join("config.json");
    write_json(&path, cfg)?;
    artifacts.push(path);
    out.artifacts = artifacts;
    Ok(out)
}
