use thiserror::Error;

/// All failure modes surfaced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate label from worker {worker} on item {item}")]
    DuplicateLabel { worker: usize, item: usize },

    #[error("label {label} on item {item} is outside 0..{k}")]
    LabelOutOfRange {
        worker: Option<usize>,
        item: usize,
        label: usize,
        k: usize,
    },

    #[error("{what} index {index} is outside 0..{bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("dataset contains no labels")]
    EmptyDataset,

    #[error("confusion entry ({row},{col}) of worker {worker} is zero; KL divergence undefined")]
    ZeroEntry {
        worker: usize,
        row: usize,
        col: usize,
    },

    #[error("noise rate rho={rho} with k={k} gives replacement probability k*rho > 1")]
    InvalidRho { rho: f64, k: usize },

    #[error("spectral initialization needs at least 3 workers, got {m}")]
    TooFewWorkers { m: usize },

    #[error("cross-moment matrix is ill-conditioned (smallest singular value {sigma:.3e})")]
    IllConditionedMoments { sigma: f64 },

    #[error("second moment is not positive definite (eigenvalue {eigenvalue:.3e})")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("confusion entry for worker {worker}, observed label {label}, is zero; posterior undefined")]
    ZeroProbability { worker: usize, label: usize },

    #[error("workers {a} and {b} have no co-labeled items")]
    NoOverlap { a: usize, b: usize },

    #[error("pairwise statistic for worker {worker}'s reference pair is zero")]
    DegeneratePair { worker: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("parse error at line {line}: {msg}")]
    ParseError { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
