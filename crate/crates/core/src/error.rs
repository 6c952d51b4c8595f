use thiserror::Error;

pub type Result<T> = std::result::Result<T, NlwError>;

#[derive(Debug, Error)]
pub enum NlwError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid exponent: {0}")]
    InvalidExponent(String),

    #[error("homogeneous Sobolev norm of order {s} needs a mean-zero field (zero mode {zero_mode:e})")]
    NonzeroMean { s: f64, zero_mode: f64 },

    #[error("symbol produced a non-finite value at frequency index {0}")]
    NonFiniteSymbol(usize),

    #[error("scale {0} is not a representable dyadic scale")]
    InvalidScale(f64),

    #[error("ratio undefined: denominator {0:e} is below 1e-30")]
    UndefinedRatio(f64),

    #[error("coefficient draw violates Hermitian symmetry at cube {cube:?} (defect {defect:e})")]
    SymmetryViolation { cube: Vec<i64>, defect: f64 },

    #[error("distribution fails the sub-Gaussian certificate: {0}")]
    Distribution(String),

    #[error("time grid is not uniform (spacing deviates by {0:e})")]
    NonUniformTimeGrid(f64),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("solution diverged at t = {last_good_time} ({reason})")]
    Blowup { last_good_time: f64, reason: String },

    #[error("Picard iteration did not contract after {iterations} iterations (last ratio {last_ratio})")]
    PicardDiverged { iterations: usize, last_ratio: f64 },

    #[error("missing norm series: L^{0}")]
    MissingSeries(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("sample {index}: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<NlwError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
