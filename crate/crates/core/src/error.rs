use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the representable range [{min}, {max}]")]
    RangeExceeded { value: i128, min: i128, max: i128 },

    #[error("parameter {0} is outside the open interval (-1, 1)")]
    OutOfRange(f64),

    #[error("value {value} does not fit in capacity {capacity}")]
    Overflow { value: u64, capacity: u64 },

    #[error("operands were produced under different RNS contexts")]
    ContextMismatch,

    #[error("invalid moduli: {0}")]
    InvalidModuli(String),

    #[error("context not admissible: {n} clients x {v} exceeds the signed range of M = {product}")]
    Inadmissible { n: u64, v: u128, product: u128 },

    #[error("invalid precision or client count: {0}")]
    InvalidParameters(String),

    #[error("model layouts differ: {0}")]
    LayoutMismatch(String),

    #[error("invalid cluster size {k} for {n} clients")]
    InvalidCluster { k: usize, n: usize },

    #[error("mixnet configuration invalid: {0}")]
    MixnetConfig(String),

    #[error("mix server {0} failed trap verification; routing aborted")]
    ServerFlagged(usize),

    #[error("configuration invalid: {0}")]
    ConfigInvalid(String),

    #[error("malformed dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
