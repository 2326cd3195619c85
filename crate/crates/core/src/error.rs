use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run or potential configuration, including step-size guard violations.
    #[error("config error: {0}")]
    Config(String),

    /// Caller passed an argument outside the operation's domain.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("evaluation error at coordinate {coordinate}: {detail}")]
    Evaluation { coordinate: usize, detail: String },

    #[error("unsupported capability: {0}")]
    Unsupported(String),

    #[error("scale error: {0}")]
    Scale(String),

    #[error(
        "divergence at iteration {iteration}, row {row}, particle {particle} \
         (last good iteration {last_good_iteration})"
    )]
    Divergence {
        iteration: usize,
        row: usize,
        particle: usize,
        last_good_iteration: usize,
    },

    #[error("fixed-point iteration did not converge after {iterations} sweeps (last residual {last_residual:e})")]
    NonConvergence {
        iterations: usize,
        last_residual: f64,
        residual_trace: Vec<f64>,
    },

    #[error("grid too narrow for coordinate {coordinate}: boundary density {boundary_density:e}")]
    GridTooNarrow {
        coordinate: usize,
        boundary_density: f64,
    },

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::NonConvergence { .. } | Error::GridTooNarrow { .. } => 4,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
