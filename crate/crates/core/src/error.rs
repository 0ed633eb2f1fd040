use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("PDSCH record at tick {tick} falls on an uplink slot")]
    SlotGrammar { tick: u64 },

    #[error("insufficient history: anchor {anchor} needs {needed} prior slots")]
    InsufficientHistory { anchor: usize, needed: usize },

    #[error(
        "insufficient future: anchor {anchor} needs slots up to {needed}, table has {available}"
    )]
    InsufficientFuture {
        anchor: usize,
        needed: usize,
        available: usize,
    },

    #[error("gap violation: span {start}..={end} crosses a filtered gap larger than the limit")]
    GapViolation { start: usize, end: usize },

    #[error("activation cache does not belong to these parameters")]
    StaleCache,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("trace too short: {slots} downlink slots, at least {needed} required")]
    TraceTooShort { slots: usize, needed: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
