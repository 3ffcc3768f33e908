//! Error type shared by all modules.

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration document.
    #[error("schema error: {0}")]
    Schema(String),

    /// A structural invariant does not hold; `invariant` names it.
    #[error("validation failed [{invariant}]: {detail}")]
    Validation { invariant: String, detail: String },

    #[error("invalid action distribution: {0}")]
    InvalidDistribution(String),

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("parameter outside the model domain: {0}")]
    Domain(String),

    #[error("model assigns zero probability to a consequence the truth can produce: {0}")]
    Support(String),

    #[error("closest model is not unique: grid points {first} and {second} tie")]
    NonUniqueMinimizer { first: usize, second: usize },

    #[error("belief has {belief} entries but the model grid has {grid}")]
    GridMismatch { belief: usize, grid: usize },

    #[error("every model assigns zero density to the observed consequence")]
    ZeroLikelihood,

    #[error("no observations yet")]
    NoObservations,

    #[error("belief reduction unsupported: {0}")]
    UnsupportedBeliefReduction(String),

    #[error("empty action set")]
    EmptyActionSet,

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("empty action history")]
    EmptyHistory,

    #[error("trajectory too short: {0} records")]
    TooShort(usize),

    #[error("interpolation covers [{lo}, {hi}] but [{start}, {end}] was requested")]
    Coverage { lo: f64, hi: f64, start: f64, end: f64 },

    #[error("event location failed at time {0}")]
    StepTooLarge(f64),

    #[error("non-finite state at time {0}")]
    NonFiniteState(f64),

    #[error("resolution too coarse: {0}")]
    ResolutionTooCoarse(String),

    #[error("not an equilibrium (residual {0:e})")]
    NotAnEquilibrium(f64),

    #[error("robustness test needs an attracting certificate with a basin")]
    MissingBasin,

    #[error("closest model not identified: {0}")]
    IdentifiabilityFailure(String),

    #[error("policy is not monotone: {0}")]
    MonotonicityViolation(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake-case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Validation { .. } => "validation",
            Error::InvalidDistribution { .. } => "invalid_distribution",
            Error::UnknownAction { .. } => "unknown_action",
            Error::Domain { .. } => "domain",
            Error::Support { .. } => "support",
            Error::NonUniqueMinimizer { .. } => "non_unique_minimizer",
            Error::GridMismatch { .. } => "grid_mismatch",
            Error::ZeroLikelihood { .. } => "zero_likelihood",
            Error::NoObservations { .. } => "no_observations",
            Error::UnsupportedBeliefReduction { .. } => "unsupported_belief_reduction",
            Error::EmptyActionSet { .. } => "empty_action_set",
            Error::UnsupportedSize { .. } => "unsupported_size",
            Error::NonConvergence { .. } => "non_convergence",
            Error::EmptyHistory { .. } => "empty_history",
            Error::TooShort { .. } => "too_short",
            Error::Coverage { .. } => "coverage",
            Error::StepTooLarge { .. } => "step_too_large",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::ResolutionTooCoarse { .. } => "resolution_too_coarse",
            Error::NotAnEquilibrium { .. } => "not_an_equilibrium",
            Error::MissingBasin { .. } => "missing_basin",
            Error::IdentifiabilityFailure { .. } => "identifiability_failure",
            Error::MonotonicityViolation { .. } => "monotonicity_violation",
            Error::UnknownPreset { .. } => "unknown_preset",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn validation(invariant: &str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant: invariant.to_string(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
