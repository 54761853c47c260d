use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid structure: {0}")]
    Structure(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown species Z={0}")]
    UnknownSpecies(u32),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("communication error on rank {rank} (peer {peer}): {msg}")]
    Comm { rank: usize, peer: usize, msg: String },

    #[error("parameter hashes diverged across ranks: {0:?}")]
    ParamDivergence(Vec<u64>),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
