use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("empty sample")]
    EmptySample,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("total weight must be positive, got {0}")]
    NonPositiveTotalWeight(f64),

    #[error("population size must be positive, got {0}")]
    NonPositivePopulation(f64),

    #[error("weights sum to {sum} but population size is {population}")]
    WeightSumMismatch { sum: f64, population: f64 },

    #[error("quantile order {0} is outside (0, 1)")]
    InvalidOrder(f64),

    #[error("unknown column `{0}`")]
    MissingColumn(String),

    #[error("duplicate quantile constraint for `{variable}` at order {alpha}")]
    DuplicateQuantile { variable: String, alpha: f64 },

    #[error("invalid distance: {0}")]
    InvalidDistance(String),

    #[error("invalid solver options: {0}")]
    InvalidOptions(String),

    #[error("rank-deficient constraint system; offending columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("infeasible constraint system: {0}")]
    Infeasible(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, CalibError>;
