use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown crystal axis `{0}`")]
    UnknownAxis(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no collinear degeneracy between {lo} and {hi} °C")]
    NoCollinearDegeneracy { lo: f64, hi: f64 },

    #[error("half maximum not bracketed on the {0} flank")]
    FlankMissing(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("grid error: {0}")]
    Grid(String),

    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse(_) | Error::UnknownAxis(_) => 2,
            Error::InvalidInput(_) | Error::Format(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {v}")))
    }
}
