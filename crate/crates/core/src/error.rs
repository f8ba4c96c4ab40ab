use std::io;

use thiserror::Error;

use crate::types::Device;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigValue { key: String, message: String },

    #[error("trace format error at byte {offset}: {message}")]
    TraceFormat { offset: u64, message: String },

    #[error("trace truncated at byte {offset}: expected {expected} records, found {found}")]
    TraceTruncated { offset: u64, expected: u64, found: u64 },

    #[error("virtual address {0:#x} does not fit in 48 bits")]
    AddressOutOfRange(u64),

    #[error("{device:?} capacity exhausted while mapping a new page")]
    OutOfMemory { device: Device },

    #[error("DRAM has no frames configured")]
    NoDramFrames,

    #[error("page {0:#x} already resides in DRAM")]
    AlreadyMigrated(u64),

    #[error("DRAM frame {0} holds no migrated page")]
    FrameNotOccupied(u64),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("invalid generator spec: {0}")]
    InvalidGenerator(String),

    #[error("{0}")]
    Experiment(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Self::ConfigValue { key: key.to_owned(), message: message.into() }
    }

    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }
}
