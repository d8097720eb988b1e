use thiserror::Error;

/// Errors raised anywhere in the discovery pipeline.
///
/// The CLI maps the variants onto process exit codes: configuration problems
/// exit with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical instability at t = {time:.6}: {detail}")]
    Unstable { time: f64, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("library column `{term}` has zero norm")]
    ZeroColumn { term: String },

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    #[error("truncation interval ({lower}, {upper}) carries probability {mass:e}; widen the hypermean limits")]
    TruncationMass { lower: f64, upper: f64, mass: f64 },

    #[error("term sets differ: {0:?}")]
    TermMismatch(Vec<String>),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("missing input file {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Whether this error stems from user-provided configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::MissingInput(_)
                | Error::TermMismatch(_)
                | Error::Io(_)
        )
    }

    /// Whether a forward solve blew up or produced non-finite values.
    pub fn is_unstable(&self) -> bool {
        matches!(self, Error::Unstable { .. } | Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
