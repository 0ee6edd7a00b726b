use std::fmt;

/// Unified error type for mesh construction, field evaluation, solves,
/// and configuration parsing.
#[derive(Debug)]
pub enum Error {
    /// Invalid mesh parameters or a mesh that violates its invariants.
    Mesh(String),
    /// Invalid conductivity field, diffeomorphism, or sequence parameters.
    Field(String),
    /// Linear solver breakdown; carries the relative residual that was achieved.
    Solver {
        message: String,
        residual: f64,
    },
    /// DN-matrix extraction or norm computation misuse (truncation, dimensions).
    Dn(String),
    /// Analytic oracle precondition violation.
    Oracle(String),
    /// Configuration file or descriptor parse/validation failure.
    Config(String),
    /// Text format violation when reading meshes or DN matrices.
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Mesh(m) => write!(f, "mesh error: {m}"),
            Error::Field(m) => write!(f, "conductivity error: {m}"),
            Error::Solver { message, residual } => {
                write!(
                    f,
                    "solver error: {message} (relative residual {residual:.3e})"
                )
            }
            Error::Dn(m) => write!(f, "dn-map error: {m}"),
            Error::Oracle(m) => write!(f, "oracle error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
