use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read input: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing column `{column}`")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: malformed record: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("binary outcome requested but row {row} has outcome {value}")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("no observations remain: {0}")]
    Empty(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("outcome vector is constant ({0}); cannot build an outcome scale")]
    DegenerateScale(f64),

    #[error("provider {provider} is absent from training fold {fold}; use larger folds or filter low-volume providers")]
    ProviderAbsentFromTraining { provider: String, fold: usize },

    #[error("class {class} has no training observations")]
    MissingClass { class: usize },

    #[error("learner failed: {0}")]
    Learner(String),

    #[error("provider {provider}: zero propensity on rows {rows:?}; the direct parameter is not identified")]
    ZeroPropensity { provider: String, rows: Vec<usize> },

    #[error(
        "provider {provider}: practical positivity violation (min propensity {min_propensity:.3e})"
    )]
    PositivityViolation {
        provider: String,
        min_propensity: f64,
    },

    #[error("standardized ratio undefined: reassigned mean is {0}")]
    UndefinedRatio(f64),

    #[error("invalid discrete law: {0}")]
    InvalidLaw(String),

    #[error("laws have different supports")]
    SupportMismatch,
}

impl Error {
    /// True for errors caused by malformed input or configuration rather than
    /// by the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::MissingColumn { .. }
                | Error::MissingValue { .. }
                | Error::NonNumeric { .. }
                | Error::MalformedRow { .. }
                | Error::NonBinaryOutcome { .. }
                | Error::Empty(_)
                | Error::InvalidArgument(_)
                | Error::DegenerateScale(_)
        )
    }
}
