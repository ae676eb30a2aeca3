use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything the kernels can reject.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("dimensions must be positive, got {h}x{w}x{c}")]
    ZeroDimension { h: usize, w: usize, c: usize },
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("kernel size {0} must be odd")]
    EvenKernel(usize),
    #[error("dilation must be at least 1")]
    ZeroDilation,
    #[error("spatial size mismatch: {0}x{1} vs {2}x{3}")]
    SpatialMismatch(usize, usize, usize, usize),
    #[error("dtype mismatch in channel concatenation")]
    DTypeMismatch,
    #[error("cannot concatenate an empty list of maps")]
    EmptyConcat,
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("average pooling needs a normalizing mode, got `sum`")]
    SumNorm,
    #[error("pyramid base kernel must be odd and at least 3, got {0}")]
    InvalidBase(usize),
    #[error("pyramid needs at least one level")]
    ZeroLevels,
    #[error("kernel {base}^{levels} overflows")]
    KernelOverflow { base: usize, levels: u32 },
    #[error("no weights for branch `{0}`")]
    MissingWeights(String),
    #[error("weights for `{name}` have the wrong shape: {reason}")]
    WeightShape { name: String, reason: String },
    #[error("invalid module config: {0}")]
    InvalidConfig(String),
    #[error("pixel ({row}, {col}) outside a {h}x{w} map")]
    PixelOutOfBounds { row: usize, col: usize, h: usize, w: usize },
    #[error("non-finite value in `{op}` at flat index {index}")]
    NonFinite { op: String, index: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
