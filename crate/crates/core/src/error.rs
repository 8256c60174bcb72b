use thiserror::Error;

/// Errors raised by the sandpile library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SandpileError {
    #[error("energy {0} is negative")]
    NegativeEnergy(f64),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },
    #[error("addition amount {amount} outside [{a}, {b}]")]
    AmountOutOfRange { amount: f64, a: f64, b: f64 },
    #[error("configuration is not stable (site {0} has energy >= 1)")]
    Unstable(usize),
    #[error("site {0} is stable and cannot topple")]
    StableSite(usize),
    #[error("configuration is not reachable from a stable one by a single addition: {0}")]
    NotReachable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("malformed avalanche report: {0}")]
    MalformedReport(String),
    #[error("insufficient samples")]
    InsufficientSamples,
    #[error("need >= 3 sizes, got {0}")]
    NeedMoreSizes(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SandpileError {
    fn from(e: std::io::Error) -> Self {
        SandpileError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SandpileError>;
