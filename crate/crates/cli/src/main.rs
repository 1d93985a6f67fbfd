use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vdf_gmm::Execution;
use vdf_gmm_cli::commands::{generate, metrics_from_files, reconstruct, write_metrics};
use vdf_gmm_cli::config::parse_vrange;
use vdf_gmm_cli::{run_benchmark, run_pipeline, run_timeseries, CliError, PipelineConfig, ReportFormat};

/// Compress particle velocity distributions with weighted Gaussian mixtures.
#[derive(Debug, Parser)]
#[command(name = "vdfgmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for sampling, fit initialization and the subdomain split.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<ReportFormat>,
    /// JSON config file; its values override flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr (-vv for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Preset name or scenario JSON file.
    #[arg(long)]
    scenario: Option<String>,
    /// Particle count (overrides the scenario's).
    #[arg(long)]
    particles: Option<usize>,
    /// Velocity dimension of preset scenarios (2 or 3).
    #[arg(long)]
    dimension: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Particle file (.vdfp) to fit instead of sampling a scenario.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Bins per histogram axis.
    #[arg(long)]
    bins: Option<usize>,
    /// Histogram range on both axes.
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_vrange, allow_hyphen_values = true)]
    vrange: Option<[f64; 2]>,
    /// uv, vw, uw or all.
    #[arg(long)]
    plane: Option<String>,
    /// Random particle split fitted independently.
    #[arg(long)]
    subdomains: Option<usize>,
    /// Initial mixture components.
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Keep the component count fixed.
    #[arg(long)]
    no_pruning: bool,
    /// Resolution of the fine particle binning used for JSD-vs-original.
    #[arg(long)]
    reference_bins: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a scenario and write particles.vdfp.
    Generate(DataArgs),
    /// Bin, fit, encode and score.
    Fit(FitArgs),
    /// Evaluate a stored model on a grid.
    Reconstruct {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 200)]
        bins: usize,
        #[arg(long, value_name = "MIN:MAX", value_parser = parse_vrange, allow_hyphen_values = true)]
        vrange: Option<[f64; 2]>,
    },
    /// Score a stored model against a stored histogram.
    Metrics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        histogram: PathBuf,
        /// Particle file the histogram came from.
        #[arg(long)]
        particles: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        reference_bins: usize,
    },
    /// Run the pipeline and compare against baseline codecs.
    Bench {
        #[command(flatten)]
        fit: FitArgs,
        /// Timed repetitions.
        #[arg(long)]
        repeat: Option<usize>,
        /// Comma-separated baseline codec names.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<String>>,
    },
    /// Warm-started fits over slowly drifting cycles.
    Timeseries {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        cycles: Option<usize>,
        /// Synthetic cycles between fits.
        #[arg(long)]
        da_interval: Option<usize>,
        /// Mean shift per synthetic cycle.
        #[arg(long, allow_hyphen_values = true)]
        drift: Option<f64>,
        /// Cold-start every cycle.
        #[arg(long)]
        no_warm_start: bool,
    },
}

fn apply_data(c: &mut PipelineConfig, a: &DataArgs) {
    if let Some(s) = &a.scenario {
        c.scenario = s.clone();
    }
    if a.particles.is_some() {
        c.particles = a.particles;
    }
    if let Some(d) = a.dimension {
        c.dimension = d;
    }
}

fn apply_fit(c: &mut PipelineConfig, a: &FitArgs) {
    apply_data(c, &a.data);
    if a.input.is_some() {
        c.input = a.input.clone();
    }
    if let Some(b) = a.bins {
        c.bins = b;
    }
    if a.vrange.is_some() {
        c.vrange = a.vrange;
    }
    if let Some(p) = &a.plane {
        c.plane = p.clone();
    }
    if let Some(k) = a.subdomains {
        c.subdomains = k;
    }
    if let Some(m) = a.components {
        c.fit.initial_components = m;
    }
    if let Some(m) = a.max_iterations {
        c.fit.max_em_iterations = m;
    }
    if a.no_pruning {
        c.fit.pruning = false;
    }
    if let Some(r) = a.reference_bins {
        c.reference_bins = r;
    }
}

/// Defaults, then flags, then the config file.
fn resolve(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut c = PipelineConfig::default();
    if let Some(s) = cli.seed {
        c.seed = Some(s);
        c.fit.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(f) = cli.format {
        c.format = f;
    }
    if cli.sequential {
        c.execution = Execution::Sequential;
    }
    match &cli.command {
        Command::Generate(d) => apply_data(&mut c, d),
        Command::Fit(f) => apply_fit(&mut c, f),
        Command::Bench { fit, repeat, baselines } => {
            apply_fit(&mut c, fit);
            if let Some(r) = repeat {
                c.repeat = *r;
            }
            if let Some(b) = baselines {
                c.baselines = b.clone();
            }
        }
        Command::Timeseries {
            fit,
            cycles,
            da_interval,
            drift,
            no_warm_start,
        } => {
            apply_fit(&mut c, fit);
            let t = &mut c.timeseries;
            if let Some(n) = cycles {
                t.cycles = *n;
            }
            if let Some(n) = da_interval {
                t.da_interval = *n;
            }
            if let Some(d) = drift {
                t.drift = *d;
            }
            if *no_warm_start {
                t.warm_start = false;
            }
        }
        Command::Reconstruct { .. } | Command::Metrics { .. } => {}
    }
    if let Some(path) = &cli.config {
        c = c.with_file(path)?;
    }
    c.fit.execution = c.execution;
    Ok(c)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let print = |paths: &[PathBuf]| {
        for p in paths {
            println!("{}", p.display());
        }
    };
    match &cli.command {
        Command::Generate(_) => print(&generate(&cfg)?),
        Command::Fit(_) => print(&run_pipeline(&cfg)?.artifacts),
        Command::Reconstruct { model, bins, vrange } => print(&[reconstruct(model, *bins, *vrange, &cfg.out)?]),
        Command::Metrics {
            model,
            histogram,
            particles,
            reference_bins,
        } => {
            let report = metrics_from_files(model, histogram, particles.as_deref(), *reference_bins)?;
            print(&[write_metrics(&cfg.out, cfg.format, report)?]);
        }
        Command::Bench { .. } => {
            let out = run_benchmark(&cfg)?;
            print(&out.pipeline.artifacts);
            for r in &out.rows {
                println!(
                    "{:<16} {:<9} {:<6} ratio {:>12.3}  jsd/hist {:.3e}",
                    r.codec, r.input, r.plane, r.ratio, r.jsd_vs_histogram
                );
            }
        }
        Command::Timeseries { .. } => {
            for r in run_timeseries(&cfg)?.rows {
                println!("cycle {:>4}  iterations {:>3}  M {:>2}  jsd {:.5}", r.cycle, r.iterations, r.components, r.jsd);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", serde_json::to_string(&e.summary()).expect("summary serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
