use thiserror::Error;

pub type Result<T, E = CboError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CboError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty measure or point set")]
    EmptyMeasure,

    #[error("every atom has infinite energy; consensus is undefined")]
    AllInfiniteEnergy,

    #[error("invalid value for `{field}`: {constraint}")]
    InvalidParameter { field: String, constraint: String },

    #[error("information rate {0} lies outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite state detected at step {step}")]
    NonFinite { step: usize },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CboError {
    pub(crate) fn invalid(field: impl Into<String>, constraint: impl Into<String>) -> Self {
        CboError::InvalidParameter {
            field: field.into(),
            constraint: constraint.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CboError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by a bad configuration rather than by the run itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            CboError::InvalidParameter { .. }
                | CboError::Parse(_)
                | CboError::Hypothesis(_)
                | CboError::ConfigMismatch(_)
                | CboError::Unsupported(_)
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(CboError::DimensionMismatch { expected, got })
    }
}
