use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // device model
    #[error("LBA range {start}..{end} exceeds namespace of {num_blocks} blocks")]
    RangeOutOfBounds {
        start: u64,
        end: u64,
        num_blocks: u64,
    },
    #[error("destination holds {available} bytes, transfer needs {needed}")]
    DestinationTooSmall { needed: usize, available: usize },
    #[error("payload of {len} bytes is not {blocks} blocks of {block_size} bytes")]
    MisalignedLength {
        len: usize,
        blocks: u64,
        block_size: usize,
    },
    #[error("matrix dimension {n} exceeds the synthesizable hardware limit of {max}")]
    UnsupportedSize { n: usize, max: usize },
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed snapshot image: {0}")]
    BadSnapshot(String),

    // library surface
    #[error("device DRAM cannot fit {requested} bytes ({free} bytes free in total)")]
    OutOfDeviceMemory { requested: u64, free: u64 },
    #[error("buffer {0} is not live")]
    UseAfterFree(u64),
    #[error("transfer path not permitted: {0}")]
    PathNotPermitted(&'static str),
    #[error("unknown kernel {0:?}")]
    UnknownKernel(String),
    #[error("buffer shape mismatch: {0}")]
    BufferShapeMismatch(String),
    #[error("unknown interceptor id {0}")]
    UnknownHookId(u64),
    #[error("interval end precedes its start")]
    NegativeInterval,
    #[error("read of LBA {lba} failed with device error code {code}")]
    ReadFault { lba: u64, code: u16 },
    #[error("write to LBA {lba} rejected: device is frozen")]
    DeviceFrozen { lba: u64 },

    // kernels
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("invalid kernel configuration: {0}")]
    InvalidKernelConfig(String),
    #[error("malformed matrix file: {0}")]
    BadMatrixFile(String),

    // erasure
    #[error("invalid code geometry: {0}")]
    InvalidGeometry(String),
    #[error("block {index} has {len} bytes, expected {expected}")]
    BlockSizeMismatch {
        index: usize,
        len: usize,
        expected: usize,
    },
    #[error("only {available} surviving blocks, need {needed}")]
    TooFewSurvivors { available: usize, needed: usize },
    #[error("selected generator rows are singular")]
    SingularSubmatrix,
    #[error("more than one block of the repair group is unavailable")]
    NotSingleErasure,
    #[error("surviving blocks have rank {rank}, need {needed}")]
    UnrecoverablePattern { rank: usize, needed: usize },

    // fault injection
    #[error("invalid fault rule {rule_id}: {reason}")]
    InvalidRule { rule_id: u64, reason: String },

    // ransomware guard
    #[error("a single {0}-byte pre-image exceeds the shadow budget")]
    ShadowBudgetExceeded(usize),
    #[error("no retained pre-image postdates the requested recovery point")]
    NothingToRecover,

    // bench / formats
    #[error("results lack the {0} path")]
    MissingPath(&'static str),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the host filesystem rather than the simulated
    /// device or its inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}
