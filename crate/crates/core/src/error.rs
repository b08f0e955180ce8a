use thiserror::Error;

use crate::metadata::{Address, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("address {0} is not 64-byte aligned")]
    Unaligned(Address),
    #[error("address {0} is outside simulated memory")]
    OutOfRange(Address),
    #[error("integrity violation at level {level} ({node})")]
    IntegrityViolation { level: u8, node: NodeId },
    #[error("data MAC mismatch at {0}")]
    DataMacMismatch(Address),
    #[error("write queue tag {tag} does not match root counter {root}")]
    TagMismatch { tag: u64, root: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("trace error on line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("crash point {point} is past the end of a {events}-event run")]
    CrashPoint { point: u64, events: u64 },
}
