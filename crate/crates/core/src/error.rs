use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("infeasible codebook: C({n_p}, {n_c}) < 2^{b_p}")]
    InfeasibleCodebook { n_p: usize, n_c: usize, b_p: usize },

    #[error("{what} out of range: {value} (allowed {allowed})")]
    OutOfRange {
        what: &'static str,
        value: String,
        allowed: String,
    },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("malformed codebook file: {0}")]
    CodebookFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn length(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::Length {
            what,
            expected,
            actual,
        }
    }

    pub(crate) fn out_of_range(
        what: &'static str,
        value: impl ToString,
        allowed: impl ToString,
    ) -> Self {
        Error::OutOfRange {
            what,
            value: value.to_string(),
            allowed: allowed.to_string(),
        }
    }
}
