use thiserror::Error;

/// Everything that can go wrong while building or solving on a lattice.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("jump intensities overflow the branch probabilities: sum(mu_i * dt) = {total} >= 1")]
    ProbabilityOverflow { total: f64 },

    #[error("step-size violation: K * dt = {product} >= 1")]
    StepSize { product: f64 },

    #[error("implicit step did not converge after {iterations} iterations (last update {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing value at level {level}, node {node}")]
    MissingValue { level: usize, node: usize },

    #[error("stopping rule inconsistent: {0}")]
    RuleInconsistency(String),

    #[error("enumeration budget exceeded: {count} rules > budget {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error("precondition failed: {what} (level {level}, node {node})")]
    Precondition {
        what: String,
        level: usize,
        node: usize,
    },

    #[error("driver violates its declared Lipschitz constant: observed {observed} > declared {declared}")]
    LipschitzViolation { observed: f64, declared: f64 },

    #[error("singular regression design; use a positive ridge parameter")]
    SingularDesign,

    #[error("overfit guard: basis size {basis} exceeds M/10 with M = {paths}")]
    OverfitGuard { basis: usize, paths: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl LabError {
    /// Resource-type failures (budgets, step sizes, convergence) as opposed
    /// to configuration or tolerance failures.
    pub fn is_resource(&self) -> bool {
        matches!(
            self,
            LabError::StepSize { .. }
                | LabError::BudgetExceeded { .. }
                | LabError::NonConvergence { .. }
                | LabError::OverfitGuard { .. }
                | LabError::SingularDesign
        )
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<csv::Error> for LabError {
    fn from(e: csv::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
