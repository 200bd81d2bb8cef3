//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // -- linear algebra --
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    // -- autodiff --
    #[error("backward pass requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    // -- tensors / shapes --
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    // -- mesh / OBJ --
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("face index {index} out of range for {vertices} vertices (line {line})")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        vertices: usize,
    },

    // -- deformation transfer --
    #[error("target face {face} has no compatible source face within distance {threshold:.3e}")]
    NoCompatibleFace { face: usize, threshold: f64 },
    #[error("degenerate triangle {face} (area {area:.3e})")]
    DegenerateTriangle { face: usize, area: f64 },
    #[error("transfer normal system is singular: {0}")]
    SingularSystem(String),

    // -- QP --
    #[error("blendshape residual matrix is rank deficient (pivot {pivot:.3e})")]
    RankDeficientBlendshapes { pivot: f64 },

    // -- audio --
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("empty input: {0}")]
    EmptyInput(String),

    // -- file formats --
    #[error("format error: {0}")]
    FormatError(String),

    // -- diffusion / schedule --
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    // -- attention --
    #[error("attention row {0} is fully masked")]
    AllMaskedRow(usize),

    // -- training --
    #[error("loss became non-finite at step {step}: {detail}")]
    NaNLoss { step: usize, detail: String },

    // -- metrics --
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("linear program infeasible: {0}")]
    Infeasible(String),
    #[error("unbounded linear program")]
    Unbounded,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{context}: {source}")]
    WithContext {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
