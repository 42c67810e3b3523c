use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("extended value iteration did not converge within {max_iters} iterations (last span gap {last_span_gap:e})")]
    EviNonConvergence { max_iters: usize, last_span_gap: f64 },

    #[error("episode {episode} starting at t = {t}: {source}")]
    Episode {
        episode: usize,
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{what} did not converge within {cap} iterations")]
    NonConvergence { what: &'static str, cap: usize },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
