use std::path::PathBuf;

/// Errors produced by the simulator, the oracle and the trace loaders.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{row}: {msg}")]
    Parse { path: String, row: usize, msg: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("unknown profile id `{0}`")]
    UnknownProfile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("brute force refused: {states} states exceed the bound of {limit}")]
    TooLarge { states: u128, limit: u128 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("knowledge base is empty; run the learning phase first")]
    EmptyKnowledgeBase,
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(path: impl Into<String>, row: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 1 for runtime infeasibility, 2 for
    /// usage, parse and validation problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
