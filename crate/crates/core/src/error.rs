use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("class {0} has a zero total count")]
    ZeroTotal(usize),
    #[error("labels are not contiguous from 0: class {0} is missing")]
    MissingClass(usize),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("loss {0} is outside [0, 1]")]
    LossOutOfRange(f64),
    #[error("mistake bound {c} is below k log k = {floor}")]
    MistakeBoundTooSmall { c: f64, floor: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("attack is disabled")]
    ConfigDisabled,
    #[error("model is not linear")]
    NotLinear,
    #[error("dimension {0} is too large for vertex enumeration")]
    DimensionTooLarge(usize),
    #[error("snapshot store is empty")]
    EmptyStore,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("training diverged at step {0}")]
    Diverged(u64),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
