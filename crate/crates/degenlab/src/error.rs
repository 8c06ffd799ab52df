use thiserror::Error;

/// Crate-wide error type. Every fallible public operation returns `Result<T, Error>`.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bad exponent ranges, negative
    /// tolerances, malformed domain descriptions, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A geometric precondition failed (point outside the domain, radius too
    /// large for the stencil, scaled image not contained in the box, ...).
    #[error("geometry: {0}")]
    Geometry(String),

    /// A requested node/ball/region selection came out empty.
    #[error("empty selection: {0}")]
    EmptySet(String),

    /// Floating-point trouble: NaN/Inf encountered, eigeniteration stalled,
    /// bisection bracket invalid.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The damped outer iteration or the policy iteration ran out of budget.
    /// Carries a human-readable account of where it stopped.
    #[error("no convergence: {message}")]
    NonConvergence {
        message: String,
        /// Solve report up to the failure point, when a solve produced one.
        report: Option<Box<crate::solver::SolveReport>>,
        /// Last iterate, for post-mortem inspection.
        partial: Option<Box<crate::grid::GridFunction>>,
    },

    /// A feasibility scan found no admissible parameter (e.g. no barrier
    /// amplitude satisfies the supersolution inequality on the collar).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Least-squares fit is degenerate (too few points, collinear data).
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Expression parse/eval error in a config-supplied formula.
    #[error("expression: {0}")]
    Expr(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Non-convergence without any attached solver state.
    pub fn non_convergence(message: impl Into<String>) -> Self {
        Error::NonConvergence {
            message: message.into(),
            report: None,
            partial: None,
        }
    }

    /// Process exit code used by the CLI: validation-type failures exit 2,
    /// non-convergence exits 3, I/O exits 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Geometry(_)
            | Error::EmptySet(_)
            | Error::Infeasible(_)
            | Error::DegenerateFit(_)
            | Error::Expr(_)
            | Error::Json(_) => 2,
            Error::NonConvergence { .. } | Error::NumericFailure(_) => 3,
            Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
