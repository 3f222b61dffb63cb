use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular point: {0}")]
    SingularPoint(String),

    #[error("solvability condition violated: <g> = {mean:e} (tolerance {tol:e})")]
    Solvability { mean: f64, tol: f64 },

    #[error("degenerate kernel: null space of dimension {dim} (expected 1)")]
    DegenerateKernel { dim: usize },

    #[error("charge neutrality violated: mean(rho) = {mean:e}")]
    Neutrality { mean: f64 },

    #[error("step size {dt:e} exceeds stability bound {bound:e}")]
    StepSize { dt: f64, bound: f64 },

    #[error("positivity violated: min F = {min:e}")]
    Positivity { min: f64 },

    #[error("tensor table cell (xi={xi}, eps={eps}) failed: {source}")]
    TableCell {
        xi: usize,
        eps: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Contract(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
