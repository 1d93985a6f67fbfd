//! Pipeline driver behind the `vdfgmm` binary: generate or load particles,
//! bin, fit, encode, score, benchmark against general-purpose codecs and
//! run warm-start time series.
//!
//! Settings resolve in three layers: built-in defaults, then command-line
//! flags, then a JSON config file. Every non-timing artifact is a pure
//! function of the resolved config.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod timeseries;

pub use bench::{run_benchmark, BenchOutput, BenchmarkRow, TimingRow};
pub use config::{PipelineConfig, ReportFormat, TimeseriesConfig};
pub use error::CliError;
pub use pipeline::{run_pipeline, PipelineOutput, PlaneFit};
pub use timeseries::{run_timeseries, TimeseriesOutput, TimeseriesRow};
