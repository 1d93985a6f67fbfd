use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] vdf_gmm::Error),
}

macro_rules! from_module {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_module!(
    vdf_gmm::synthdata::SynthError,
    vdf_gmm::histogram::HistogramError,
    vdf_gmm::wgmm::FitError,
    vdf_gmm::metrics::MetricsError,
    vdf_gmm::codec::CodecError
);

/// One-line machine-readable error record written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorSummary {
    pub status: &'static str,
    pub exit_code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything the caller can fix by changing the invocation, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InputNotFound(_) | CliError::Usage(_) | CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }

    /// The subsystem the error came from.
    pub fn kind(&self) -> &'static str {
        use vdf_gmm::Error as E;
        match self {
            CliError::InputNotFound(_) => "input",
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core(E::Synth(_)) => "synthdata",
            CliError::Core(E::Histogram(_)) => "histogram",
            CliError::Core(E::Fit(_)) => "wgmm",
            CliError::Core(E::Metrics(_)) => "metrics",
            CliError::Core(E::Codec(_)) => "codec",
        }
    }

    pub fn summary(&self) -> ErrorSummary {
        ErrorSummary {
            status: "error",
            exit_code: self.exit_code(),
            kind: self.kind(),
            message: self.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::InputNotFound("x.vdfp".into()).exit_code(), 2);
        assert_eq!(CliError::usage("bad").exit_code(), 2);
        let e: CliError = vdf_gmm::wgmm::FitError::DegenerateAxis { axis: 1 }.into();
        assert_eq!(e.exit_code(), 1);
        assert_eq!(e.kind(), "wgmm");
        assert!(e.to_string().starts_with("wgmm: "));
    }

    #[test]
    fn input_not_found_message() {
        let e = CliError::InputNotFound("missing.vdfp".into());
        assert_eq!(e.to_string(), "input not found: missing.vdfp");
        let s = serde_json::to_string(&e.summary()).unwrap();
        assert!(s.contains("\"exit_code\":2"));
    }
}
