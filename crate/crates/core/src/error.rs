use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or environment geometry.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or vector dimensions disagree.
    #[error("shape error: {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An API was used outside its contract (e.g. stepping a finished trial).
    #[error("usage error: {0}")]
    Usage(String),

    /// Evidence that no task in the set could have produced.
    #[error("inconsistent evidence: {0}")]
    Inconsistent(String),

    /// Exhaustive search exceeded its configured budget.
    #[error("search space exceeded: {visited} states visited, cap is {cap}")]
    SearchSpace { visited: usize, cap: usize },

    /// Regression target without variance.
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            what,
            expected,
            got,
        }
    }
}
