use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("conjugate gradient did not converge: residual {residual:e} after {iterations} iterations")]
    Convergence { residual: f64, iterations: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("manifest integrity: {0}")]
    ManifestIntegrity(String),

    #[error("score tables do not share keys; missing: {}", missing.join(", "))]
    Join { missing: Vec<String> },

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Stable machine-readable identifier, used in structured CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Shape(_) => "shape",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::InvalidRegion(_) => "invalid-region",
            Error::Convergence { .. } => "convergence",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::InvalidInput(_) => "invalid-input",
            Error::ManifestIntegrity(_) => "manifest-integrity",
            Error::Join { .. } => "join",
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }

    /// Path the error refers to, if any.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Schema { path, .. } | Error::Io { path, .. } | Error::Image { path, .. } => {
                Some(path)
            }
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
