use thiserror::Error;

use crate::codec::CodecError;
use crate::histogram::HistogramError;
use crate::metrics::MetricsError;
use crate::synthdata::SynthError;
use crate::wgmm::FitError;

/// Crate-level error: every variant names the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("synthdata: {0}")]
    Synth(#[from] SynthError),
    #[error("histogram: {0}")]
    Histogram(#[from] HistogramError),
    #[error("wgmm: {0}")]
    Fit(#[from] FitError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
