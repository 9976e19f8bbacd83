use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("pixel {index} has value {value}, outside the 7-bit palette")]
    PixelRange { index: usize, value: u8 },

    #[error("frame has {got} bytes, expected {expected}")]
    FrameSize { got: usize, expected: usize },

    #[error("background model needs at least one sample frame")]
    EmptySamples,

    #[error("{what}: bad magic {got:?}")]
    FileMagic { what: &'static str, got: Vec<u8> },

    #[error("{what}: truncated at byte {offset}")]
    FileTruncated { what: &'static str, offset: u64 },

    #[error("{what}: {detail} (at byte {offset})")]
    FileField {
        what: &'static str,
        offset: u64,
        detail: String,
    },

    #[error("color {color} outside the 7-bit palette")]
    ColorRange { color: u32 },

    #[error("block ({column}, {row}) outside the grid")]
    BlockRange { column: u32, row: u32 },

    #[error("offset ({dc}, {dr}) outside the grid's offset range")]
    OffsetOutOfRange { dc: i32, dr: i32 },

    #[error("unknown feature set '{0}' (expected basic, bpros, bprost or blob-prost)")]
    UnknownFeatureSet(String),

    #[error("feature set '{0}' requires a background model")]
    MissingBackground(&'static str),

    #[error("unknown environment '{0}'")]
    UnknownEnv(String),

    #[error("step called on a finished episode; call reset first")]
    EpisodeOver,

    #[error("handshake failed: {detail}")]
    Handshake { detail: String },

    #[error("wire protocol error: {detail}")]
    Protocol { detail: String },

    #[error("invalid configuration: {detail}")]
    Config { detail: String },

    #[error("results file {path}, line {line}: {detail}")]
    ResultsParse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("need at least two observations per sample, got {a} and {b}")]
    SampleTooSmall { a: usize, b: usize },
}

impl Error {
    /// True for failures of the external-emulator wire protocol, including
    /// the initial handshake. The command-line tool maps these to their own
    /// exit code.
    pub fn is_protocol(&self) -> bool {
        matches!(self, Error::Handshake { .. } | Error::Protocol { .. })
    }
}
