use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tensor shape {shape:?} does not hold {len} values")]
    TensorLength { shape: Vec<usize>, len: usize },
    #[error("tensor shape {0:?} has a zero or missing dimension")]
    EmptyShape(Vec<usize>),
    #[error("shape mismatch at layer {layer}: expected {expected:?}, found {found:?}")]
    ShapeMismatch { layer: usize, expected: Vec<usize>, found: Vec<usize> },
    #[error("layer {layer} cannot accept per-sample input shape {shape:?}: {reason}")]
    InvalidLayer { layer: usize, shape: Vec<usize>, reason: &'static str },
    #[error("backward called on layer {layer} before forward")]
    BackwardBeforeForward { layer: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch size mismatch: {logits} rows of logits, {labels} labels")]
    BatchMismatch { logits: usize, labels: usize },
    #[error("expected {expected} parameter values, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("gradient list does not match parameter list: {0}")]
    GradientMismatch(&'static str),
    #[error("learning rate must be finite and non-negative, got {0}")]
    LearningRate(f64),
    #[error("cut index {cut} outside [{min}, {max}]")]
    CutOutOfRange { cut: usize, min: usize, max: usize },
    #[error("model with {count} parameters is too large for finite-difference checking (limit {limit})")]
    TooManyParams { count: usize, limit: usize },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("IDX {file} file: bad magic number {found:#010x}")]
    IdxMagic { file: &'static str, found: u32 },
    #[error("IDX {file} file truncated: need {expected} bytes, found {found}")]
    IdxTruncated { file: &'static str, expected: usize, found: usize },
    #[error("IDX files disagree on sample count: {images} images, {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
    #[error("cannot split {samples} samples across {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("Dirichlet partition gave some client fewer than {min_samples} samples after {attempts} attempts")]
    PartitionInfeasible { min_samples: usize, attempts: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("aggregation weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("protocol misuse: {0}")]
    Protocol(String),
}
