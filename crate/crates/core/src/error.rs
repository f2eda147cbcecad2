use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("matrix is not symmetric: |G[{row}][{col}] - G[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("Jacobi iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("malformed encoding at byte {offset}: {reason}")]
    Encoding { offset: usize, reason: String },

    #[error("unknown operation tag `{0}`")]
    UnknownOp(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("line {line}: {reason}")]
    Benchmark { line: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid candidates: {0}")]
    NoValidCandidates(String),

    #[error("too many invalid scores: {invalid} of {total}")]
    TooManyInvalid { invalid: usize, total: usize },

    #[error("all training runs diverged")]
    AllDiverged,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
