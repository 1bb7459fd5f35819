use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One row of the rank table produced while searching for the minimal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RankRow {
    pub q: usize,
    pub rank: usize,
    pub rows: usize,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge")]
    SvdNoConvergence,

    #[error("order q = {q} is not admissible at time step t = {t}")]
    OrderExceedsTime { q: usize, t: usize },

    #[error("time step {t} outside the valid range [{start}, {end}]")]
    TimeOutOfRange { t: usize, start: usize, end: usize },

    #[error("need more than {required} rollouts, got {got}")]
    InsufficientRollouts { required: usize, got: usize },

    #[error("observability matrix at step {t} (q = {q}) has rank {rank} < n = {n}")]
    NotObservable {
        t: usize,
        q: usize,
        rank: usize,
        n: usize,
    },

    #[error("no rank deficiency found for q <= {q_max}; rank table: {ranks:?}")]
    OrderNotSaturated { q_max: usize, ranks: Vec<RankRow> },

    #[error("operation requires a time-invariant plant")]
    NotTimeInvariant,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("input correlation matrix is singular; use richer excitation")]
    SingularExcitation,

    #[error("requested order {requested} exceeds Hankel rank {rank} (singular values {singular_values:?})")]
    EraOrder {
        requested: usize,
        rank: usize,
        singular_values: Vec<f64>,
    },

    #[error("observability matrix of the realization is rank deficient ({rank} < {order})")]
    RankDeficientRealization { rank: usize, order: usize },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
