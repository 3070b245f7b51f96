use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("all association hypotheses have zero likelihood")]
    DegenerateLikelihood,

    #[error("all particle weights underflowed to zero")]
    WeightUnderflow,

    #[error("invalid mixing weights: {0}")]
    InvalidWeights(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("record and truth have no overlapping steps")]
    EmptyOverlap,

    #[error("incompatible records: {0}")]
    IncompatibleRecords(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(
        context: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for configuration errors, including ones raised inside a stage.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig { .. } | Error::ConfigParse(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}
