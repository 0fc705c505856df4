//! File formats, the auditory network generator and figure emitters.

pub mod auditory;
pub mod figures;
pub mod network;
pub mod records;
pub mod stimulus;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn err(line: usize, msg: impl Into<String>) -> NetioError {
    NetioError::Parse {
        line,
        msg: msg.into(),
    }
}

pub use network::{
    build_lut, load_network, parse_network, serialize_network, Located, NetworkDesc,
};
pub use records::FileSink;
pub use stimulus::{parse_stimulus, serialize_stimulus};
