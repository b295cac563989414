use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrstError {
    #[error("row {row}: malformed record: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("missing column `{0}` in CSV header")]
    MissingColumn(String),

    #[error("row {row}: unknown arm `{value}` (expected `control` or `treatment`)")]
    UnknownArm { row: usize, value: String },

    #[error("row {row}: non-finite value `{value}`")]
    NonFiniteValue { row: usize, value: String },

    #[error("row {row}: duplicate cell for subject `{subject}` at visit {visit}, outcome {outcome}")]
    DuplicateCell {
        row: usize,
        subject: String,
        visit: usize,
        outcome: usize,
    },

    #[error("row {row}: subject `{subject}` appears in both arms")]
    ArmConflict { row: usize, subject: String },

    #[error("subject `{subject}` has no record for visit {visit}, outcome {outcome}")]
    MissingCell {
        subject: String,
        visit: usize,
        outcome: usize,
    },

    #[error("arm `{arm}` has {count} subjects; at least 2 are required")]
    TooFewSubjects { arm: &'static str, count: usize },

    #[error("every visit is degenerate; nothing left to test")]
    AllVisitsDegenerate,

    #[error("degenerate variance: J'ΣJ = {0:e}")]
    DegenerateVariance(f64),

    #[error("non-positive variance term J'(C + λD)J = {0:e}")]
    NonPositiveVariance(f64),

    #[error("effect size must be positive, got {0}")]
    NonPositiveEffect(f64),

    #[error("both arms have zero SD at visit {visit}, outcome {outcome}")]
    BothSdZero { visit: usize, outcome: usize },

    #[error("correlation matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NonPsdCorrelation(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl LrstError {
    /// Stable machine-readable code for reports.
    pub fn code(&self) -> &'static str {
        match self {
            LrstError::MalformedRow { .. } => "malformed_row",
            LrstError::MissingColumn(_) => "missing_column",
            LrstError::UnknownArm { .. } => "unknown_arm",
            LrstError::NonFiniteValue { .. } => "non_finite_value",
            LrstError::DuplicateCell { .. } => "duplicate_cell",
            LrstError::ArmConflict { .. } => "arm_conflict",
            LrstError::MissingCell { .. } => "missing_cell",
            LrstError::TooFewSubjects { .. } => "too_few_subjects",
            LrstError::AllVisitsDegenerate => "all_visits_degenerate",
            LrstError::DegenerateVariance(_) => "degenerate_variance",
            LrstError::NonPositiveVariance(_) => "non_positive_variance",
            LrstError::NonPositiveEffect(_) => "non_positive_effect",
            LrstError::BothSdZero { .. } => "both_sd_zero",
            LrstError::NonPsdCorrelation(_) => "non_psd_correlation",
            LrstError::InvalidScenario(_) => "invalid_scenario",
            LrstError::InvalidArgument(_) => "invalid_argument",
            LrstError::Io(_) => "io",
        }
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            LrstError::DegenerateVariance(_)
                | LrstError::NonPositiveVariance(_)
                | LrstError::Io(_)
        )
    }
}

impl From<std::io::Error> for LrstError {
    fn from(e: std::io::Error) -> Self {
        LrstError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LrstError>;
