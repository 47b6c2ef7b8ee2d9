use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("image dimensions {height}x{width} are invalid")]
    InvalidDimensions { height: usize, width: usize },
    #[error("dimension mismatch: {left_height}x{left_width} vs {right_height}x{right_width}")]
    DimensionMismatch {
        left_height: usize,
        left_width: usize,
        right_height: usize,
        right_width: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("Gaussian budget must be at least 2, got {0}")]
    BudgetTooSmall(usize),
    #[error("primitive count must be positive")]
    EmptyCloud,
    #[error("log-domain quantizer received non-positive value {0}")]
    LogDomain(f64),
    #[error("code {code} out of range for a {bits}-bit quantizer")]
    CodeOutOfRange { code: u32, bits: u8 },
    #[error("bit depth {0} not in 1..=16")]
    InvalidBitDepth(u8),
    #[error("calibration needs at least one value")]
    EmptyCalibration,
    #[error("non-finite attribute value")]
    NonFinite,
    #[error("image too small for MS-SSIM: {height}x{width}")]
    ImageTooSmall { height: usize, width: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    UnsupportedVersion(u8),
    #[error("bitstream truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("bitstream has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("{0} exceeds the 32-bit range of the container")]
    TooLarge(&'static str),
    #[error("malformed bitstream: {0}")]
    Malformed(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
