//! Compression of particle velocity distribution functions with weighted
//! Gaussian mixture models.
//!
//! The pipeline bins particle velocities into fixed-range 2D histograms
//! ([`histogram`]), fits a weighted mixture to the bin centers with the bin
//! counts as weights ([`wgmm`]), stores the mixture parameters in a compact
//! binary or JSON form ([`codec`]) and scores the result against the
//! histogram and the raw particles ([`metrics`]). [`synthdata`] provides
//! reproducible synthetic velocity populations.
//!
//! The data-parallel inner loops (sampling, binning, E/M-step sums, grid
//! evaluation) run on rayon when the `parallel` feature is on and
//! [`Execution::Parallel`] is selected. Reductions use fixed chunking and a
//! fixed pairwise order, so both execution modes give bit-identical results.

pub mod codec;
pub mod error;
pub mod exec;
pub mod histogram;
pub mod linalg;
pub mod metrics;
pub mod synthdata;
pub mod wgmm;

pub use error::{Error, Result};
pub use exec::Execution;
pub use histogram::{AxisRange, Histogram2D, Plane, WeightedPoints};
pub use metrics::{MetricsReport, PdfGrid};
pub use synthdata::{ParticleSet, ScenarioSpec};
pub use wgmm::{fit, FitConfig, FitResult, GaussianComponent, GmmModel};
