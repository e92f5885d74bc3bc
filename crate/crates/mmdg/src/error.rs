use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("unsupported polynomial degree {0} (supported 1..=4)")]
    UnsupportedDegree(usize),
    #[error("unsupported quadrature exactness {0}")]
    UnsupportedExactness(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("entanglement at t = {t}: J = {j} at x = ({x}, {y})")]
    Entanglement { t: f64, j: f64, x: f64, y: f64 },
    #[error("mass block of element {element} is not positive definite")]
    NonSpdMass { element: usize },
    #[error("non-finite geometry at t = {t}")]
    NonFinite { t: f64 },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario has no exact solution")]
    NoExactSolution,
}

impl Error {
    /// Runtime failures (as opposed to validation failures) map to exit code 2.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::Entanglement { .. } | Error::NonSpdMass { .. } | Error::NonFinite { .. } | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
