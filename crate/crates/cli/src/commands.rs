use std::path::{Path, PathBuf};

use vdf_gmm::codec::{encode_particles, encode_pdf};
use vdf_gmm::metrics::plane_report;
use vdf_gmm::wgmm::evaluate_pdf_grid;
use vdf_gmm::{AxisRange, MetricsReport};

use crate::config::{PipelineConfig, ReportFormat};
use crate::error::CliError;
use crate::io::{load_histogram, load_model, read_file, sidecar_path, write_file, write_json, write_report};
use crate::pipeline::MetricsRow;

/// Samples the scenario and writes `particles.vdfp` plus the resolved
/// `scenario.json`.
pub fn generate(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let spec = cfg.scenario_spec()?;
    let particles = vdf_gmm::synthdata::generate_with(&spec, cfg.execution)?;
    let data = cfg.out.join("particles.vdfp");
    write_file(&data, &encode_particles(&particles))?;
    let scenario = cfg.out.join("scenario.json");
    write_json(&scenario, &spec)?;
    Ok(vec![data, scenario])
}

/// Evaluates a stored model on a grid and writes it as a density `.h2d`.
/// The grid range comes from `vrange`, or from the ranges stored with the
/// model.
pub fn reconstruct(
    model_path: &Path,
    bins: usize,
    vrange: Option<[f64; 2]>,
    out: &Path,
) -> Result<PathBuf, CliError> {
    let (model, meta) = load_model(model_path)?;
    if model.dimension() != 2 {
        return Err(CliError::usage(format!(
            "reconstruct needs a 2D plane model, got dimension {}",
            model.dimension()
        )));
    }
    let ranges = match vrange {
        Some([lo, hi]) => {
            let r = AxisRange::new(lo, hi)?;
            [r, r]
        }
        None => match meta.axis_ranges.as_slice() {
            [a, b] => [*a, *b],
            _ => return Err(CliError::usage("model stores no axis ranges; pass --vrange")),
        },
    };
    let grid = evaluate_pdf_grid(&model, bins, ranges)?;
    let (bytes, sidecar) = encode_pdf(&grid, meta.plane);
    let name = model_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name
        .trim_end_matches(".gmmc")
        .trim_end_matches(".gmm.json")
        .trim_start_matches("model_");
    let path = out.join(format!("recon_{stem}.h2d"));
    write_file(&path, &bytes)?;
    write_file(&sidecar_path(&path), sidecar.to_json().as_bytes())?;
    Ok(path)
}

/// Scores stored files: a model against a histogram and, optionally, the
/// particles the histogram was built from.
pub fn metrics_from_files(
    model_path: &Path,
    histogram_path: &Path,
    particles_path: Option<&Path>,
    reference_bins: usize,
) -> Result<MetricsReport, CliError> {
    let (model, _) = load_model(model_path)?;
    let hist = load_histogram(histogram_path)?;
    let particles = particles_path
        .map(|p| read_file(p).and_then(|b| Ok(vdf_gmm::codec::decode_particles(&b)?)))
        .transpose()?;
    Ok(plane_report(&model, &hist, particles.as_ref(), reference_bins)?)
}

pub fn write_metrics(out: &Path, format: ReportFormat, report: MetricsReport) -> Result<PathBuf, CliError> {
    write_report(
        out,
        "metrics",
        format,
        &[MetricsRow {
            subdomain: None,
            report,
        }],
    )
}
