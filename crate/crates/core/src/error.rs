//! Error type shared by all modules of the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("unknown entity {name:?}")]
    UnknownEntity { name: String },

    #[error("entity {name:?} appears in more than one link")]
    DuplicateLink { name: String },

    #[error("alignment store invariant violated: {0}")]
    StoreInvariant(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no aligned core: pruning deleted every entity")]
    NoAlignedCore,

    #[error("removal fractions sum to {0}, must be < 1")]
    RemovalFractions(f64),

    #[error("split {split} of {collection} would be empty ({len} items)")]
    EmptySplit {
        collection: &'static str,
        split: &'static str,
        len: usize,
    },

    #[error("store already carries split tags")]
    AlreadySplit,

    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),

    #[error("label class {0} absent from training data, label weights undefined")]
    MissingClass(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty target table")]
    EmptyTargets,

    #[error("k = {k} out of range 1..={max}")]
    BadK { k: usize, max: usize },

    #[error("cosine undefined for zero vector")]
    ZeroVector,

    #[error("verdicts and gold labels cover different entity sets")]
    VerdictMismatch,

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
