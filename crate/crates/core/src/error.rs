use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("singular vector extraction did not converge after {iterations} iterations ({} of {requested} vectors found)", partial.len())]
    SvdNotConverged {
        iterations: usize,
        requested: usize,
        partial: Vec<Vec<f64>>,
    },

    #[error("full SVD did not converge")]
    SvdFailed,

    #[error("data contains a single class; both labels are required")]
    SingleClass,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit aborted: {0}")]
    Diverged(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
