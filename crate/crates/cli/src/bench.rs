use std::time::Instant;

use serde::Serialize;

use vdf_gmm::codec::{decode_histogram, encode_histogram, encode_model, CodecParams, CodecRegistry};
use vdf_gmm::histogram::{bin_particles_with, refine_pdf, to_pdf};
use vdf_gmm::metrics::jsd;
use vdf_gmm::wgmm::evaluate_pdf_grid;
use vdf_gmm::{ParticleSet, PdfGrid, Plane};

use crate::config::{PipelineConfig, ReportFormat};
use crate::error::CliError;
use crate::io::{median, opt, timed_write, write_file, write_report, CsvRow};
use crate::pipeline::{bin_and_fit, model_meta, run_pipeline, PipelineOutput, PlaneFit};

/// One codec applied to one input. Timings live in [`TimingRow`] so that
/// this table is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub codec: String,
    /// `particles` (the plane's raw velocity pairs) or `histogram`.
    pub input: String,
    pub plane: String,
    pub bytes_in: usize,
    pub bytes_out: usize,
    pub ratio: f64,
    pub lossy: bool,
    /// Round trip reproduced the input exactly; empty for lossy codecs.
    pub lossless_verified: Option<bool>,
    /// JSD against a fine direct binning of the particles.
    pub jsd_vs_original: f64,
    /// JSD against the histogram on its own grid.
    pub jsd_vs_histogram: f64,
    pub bic: Option<f64>,
    pub components: Option<usize>,
    pub iterations: Option<usize>,
}

impl CsvRow for BenchmarkRow {
    fn header() -> String {
        "codec,input,plane,bytes_in,bytes_out,ratio,lossy,lossless_verified,jsd_vs_original,jsd_vs_histogram,bic,components,iterations".into()
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.codec,
            self.input,
            self.plane,
            self.bytes_in,
            self.bytes_out,
            self.ratio,
            self.lossy,
            opt(self.lossless_verified),
            self.jsd_vs_original,
            self.jsd_vs_histogram,
            opt(self.bic),
            opt(self.components),
            opt(self.iterations)
        )
    }
}

/// Median wall-clock seconds over the repeat count. Compression and
/// file-write time are kept apart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub codec: String,
    pub input: String,
    pub plane: String,
    pub repeat: usize,
    pub compress_seconds: f64,
    pub decompress_seconds: f64,
    pub write_seconds: f64,
}

impl CsvRow for TimingRow {
    fn header() -> String {
        "codec,input,plane,repeat,compress_seconds,decompress_seconds,write_seconds".into()
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.codec, self.input, self.plane, self.repeat, self.compress_seconds, self.decompress_seconds, self.write_seconds
        )
    }
}

#[derive(Debug)]
pub struct BenchOutput {
    pub pipeline: PipelineOutput,
    pub rows: Vec<BenchmarkRow>,
    pub timings: Vec<TimingRow>,
}

/// The plane's two velocity components as little-endian f64 pairs.
pub fn plane_bytes(particles: &ParticleSet, plane: Plane) -> Vec<u8> {
    let (a, b) = plane.axes();
    let mut out = Vec::with_capacity(particles.len() * 16);
    for i in 0..particles.len() {
        let v = particles.velocity(i);
        out.extend_from_slice(&v[a].to_le_bytes());
        out.extend_from_slice(&v[b].to_le_bytes());
    }
    out
}

fn plane_particles(bytes: &[u8], like: &ParticleSet, plane: Plane) -> Result<ParticleSet, CliError> {
    let v: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (a, b) = plane.axes();
    let t = like.nominal_temperature();
    Ok(ParticleSet::new(
        2,
        v,
        like.weights().map(|w| w.to_vec()),
        like.species_label().to_string(),
        vec![t[a], t[b]],
    )?)
}

struct References {
    /// Histogram pdf on its own grid.
    hist: PdfGrid,
    /// Fine direct binning of the particles.
    fine: PdfGrid,
}

fn references(cfg: &PipelineConfig, f: &PlaneFit, particles: &ParticleSet) -> Result<References, CliError> {
    let target = cfg.reference_bins.max(cfg.bins);
    let fine = bin_particles_with(particles, f.plane, target, f.ranges, cfg.execution)?;
    Ok(References {
        hist: to_pdf(&f.histogram)?,
        fine: to_pdf(&fine)?,
    })
}

fn time<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn gmm_rows(
    cfg: &PipelineConfig,
    f: &PlaneFit,
    particles: &ParticleSet,
    rows: &mut Vec<BenchmarkRow>,
    timings: &mut Vec<TimingRow>,
) -> Result<(), CliError> {
    let stem = f.stem();
    let meta = model_meta(particles, f.plane, f.ranges, 0);
    let mut compress = Vec::with_capacity(cfg.repeat);
    let mut decompress = Vec::with_capacity(cfg.repeat);
    let mut encoded = Vec::new();
    for _ in 0..cfg.repeat {
        let (res, t) = time(|| -> Result<_, CliError> {
            let (_, r) = bin_and_fit(cfg, particles, f.plane, f.ranges, None)?;
            Ok(encode_model(&r.model, &meta)?)
        });
        encoded = res?;
        compress.push(t);
        let (grid, t) = time(|| evaluate_pdf_grid(&f.result.model, cfg.bins, f.ranges));
        grid?;
        decompress.push(t);
    }
    let write = timed_write(&cfg.out.join(".bench_write.tmp"), &encoded, cfg.repeat)?;
    let r = &f.report;
    let raw = plane_bytes(particles, f.plane).len();
    for (input, bytes_in) in [("particles", raw), ("histogram", r.histogram_bytes)] {
        rows.push(BenchmarkRow {
            codec: "gmm".into(),
            input: input.into(),
            plane: stem.clone(),
            bytes_in,
            bytes_out: r.compressed_bytes,
            ratio: bytes_in as f64 / r.compressed_bytes as f64,
            lossy: true,
            lossless_verified: None,
            jsd_vs_original: r.jsd_vs_original.unwrap_or(f64::NAN),
            jsd_vs_histogram: r.jsd,
            bic: Some(r.bic),
            components: Some(r.components),
            iterations: r.iterations,
        });
        timings.push(TimingRow {
            codec: "gmm".into(),
            input: input.into(),
            plane: stem.clone(),
            repeat: cfg.repeat,
            compress_seconds: median(compress.clone()),
            decompress_seconds: median(decompress.clone()),
            write_seconds: write,
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn baseline_rows(
    cfg: &PipelineConfig,
    registry: &CodecRegistry,
    name: &str,
    f: &PlaneFit,
    particles: &ParticleSet,
    refs: &References,
    rows: &mut Vec<BenchmarkRow>,
    timings: &mut Vec<TimingRow>,
) -> Result<(), CliError> {
    let codec = registry.get(name)?;
    let lossy = codec.descriptor().lossy;
    let params = CodecParams::new();
    let stem = f.stem();
    let (hist_bytes, sidecar) = encode_histogram(&f.histogram);
    let raw = plane_bytes(particles, f.plane);
    let target = refs.fine.n_bins();

    for (input, data) in [("particles", &raw), ("histogram", &hist_bytes)] {
        let mut compress = Vec::with_capacity(cfg.repeat);
        let mut decompress = Vec::with_capacity(cfg.repeat);
        let mut packed = Vec::new();
        let mut back = Vec::new();
        for _ in 0..cfg.repeat {
            let (p, t) = time(|| codec.compress(data, &params));
            packed = p?;
            compress.push(t);
            let (b, t) = time(|| codec.decompress(&packed, &params));
            back = b?;
            decompress.push(t);
        }
        let write = timed_write(&cfg.out.join(".bench_write.tmp"), &packed, cfg.repeat)?;

        // Scores are computed from what the codec gave back.
        let (jsd_vs_original, jsd_vs_histogram) = if input == "particles" {
            let decoded = plane_particles(&back, particles, f.plane)?;
            let fine = to_pdf(&bin_particles_with(&decoded, Plane::Uv, target, f.ranges, cfg.execution)?)?;
            let coarse = to_pdf(&bin_particles_with(&decoded, Plane::Uv, cfg.bins, f.ranges, cfg.execution)?)?;
            (jsd(&fine, &refs.fine)?, jsd(&coarse, &refs.hist)?)
        } else {
            let decoded = decode_histogram(&back, &sidecar)?;
            (
                jsd(&refine_pdf(&decoded, target)?, &refs.fine)?,
                jsd(&to_pdf(&decoded)?, &refs.hist)?,
            )
        };
        rows.push(BenchmarkRow {
            codec: name.into(),
            input: input.into(),
            plane: stem.clone(),
            bytes_in: data.len(),
            bytes_out: packed.len(),
            ratio: data.len() as f64 / packed.len().max(1) as f64,
            lossy,
            lossless_verified: (!lossy).then_some(back == *data),
            jsd_vs_original,
            jsd_vs_histogram,
            bic: None,
            components: None,
            iterations: None,
        });
        timings.push(TimingRow {
            codec: name.into(),
            input: input.into(),
            plane: stem.clone(),
            repeat: cfg.repeat,
            compress_seconds: median(compress),
            decompress_seconds: median(decompress),
            write_seconds: write,
        });
    }
    Ok(())
}

/// Runs the pipeline, then every codec on identical inputs. Writes
/// `bench.csv` (and `bench.json` for JSON output) plus
/// `bench_timings.csv`.
pub fn run_benchmark(cfg: &PipelineConfig) -> Result<BenchOutput, CliError> {
    let pipeline = run_pipeline(cfg)?;
    let registry = CodecRegistry::with_builtins();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for f in &pipeline.fits {
        let particles = pipeline.particles_of(f);
        gmm_rows(cfg, f, particles, &mut rows, &mut timings)?;
        let refs = references(cfg, f, particles)?;
        for name in &cfg.baselines {
            baseline_rows(cfg, &registry, name, f, particles, &refs, &mut rows, &mut timings)?;
        }
        log::info!("benchmarked plane {}", f.stem());
    }
    let tmp = cfg.out.join(".bench_write.tmp");
    std::fs::remove_file(&tmp).map_err(|e| CliError::io(&tmp, e))?;

    write_report(&cfg.out, "bench", ReportFormat::Csv, &rows)?;
    if cfg.format == ReportFormat::Json {
        write_report(&cfg.out, "bench", ReportFormat::Json, &rows)?;
    }
    write_file(&cfg.out.join("bench_timings.csv"), crate::io::csv_text(&timings).as_bytes())?;
    Ok(BenchOutput {
        pipeline,
        rows,
        timings,
    })
}
