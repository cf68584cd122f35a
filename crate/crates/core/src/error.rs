use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical blow-up at step {step}: {detail}")]
    NumericalBlowup { step: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "kernel matrix could not be factorized even with nugget {nugget:e} \
         (minimum pairwise node distance {min_distance:e})"
    )]
    IllConditionedKernel { nugget: f64, min_distance: f64 },

    #[error("unsupported problem structure: {0}")]
    UnsupportedStructure(String),

    #[error(
        "observations are not identifiable: mean control energy {energy:e} is below {tolerance:e}; \
         a null control is optimal for every penalty weight, so no weight can be recovered"
    )]
    NonIdentifiable { energy: f64, tolerance: f64 },

    #[error("trajectory {index}: {source}")]
    Trajectory {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("value solve at theta = {theta}: {source}")]
    AtTheta {
        theta: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn at_trajectory(self, index: usize) -> Self {
        Error::Trajectory {
            index,
            source: Box::new(self),
        }
    }

    pub fn at_theta(self, theta: f64) -> Self {
        Error::AtTheta {
            theta,
            source: Box::new(self),
        }
    }

    /// The innermost error, with trajectory/theta context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Trajectory { source, .. } | Error::AtTheta { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NumericalBlowup { .. } | Error::Numerical(_) | Error::IllConditionedKernel { .. }
        )
    }
}
