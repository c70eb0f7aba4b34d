use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("utility table invariant violated at n = {n}: {what}")]
    Table { n: usize, what: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stale switch: {0}")]
    StaleSwitch(String),

    #[error("switch count {switches} exceeded convergence bound {bound}\n{trace}")]
    BoundExceeded {
        switches: usize,
        bound: u64,
        trace: String,
    },

    #[error("missing threshold for SU {0}")]
    MissingThreshold(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
