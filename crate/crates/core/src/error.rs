//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by trace I/O, preprocessing, and the numerical stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected \"PNRB\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported bundle version {found} (supported: {supported})")]
    VersionMismatch { found: u16, supported: u16 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid trace set: {0}")]
    InvalidTraceSet(String),

    #[error("empty trace set")]
    EmptySet,

    #[error("trace too short: {len} samples, need at least {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("trace length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("window {start}..{end} invalid for trace of length {len}")]
    InvalidWindow { start: usize, end: usize, len: usize },

    #[error("degenerate parabola fit (zero curvature)")]
    DegenerateFit,

    #[error("parabola vertex at {vertex_s} s lies outside the fit window")]
    VertexOutsideWindow { vertex_s: f64 },

    #[error("alignment failed on trace {index}: {source}")]
    Alignment {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shift magnitude {shift_s} s exceeds trace duration {duration_s} s")]
    ShiftOutOfRange { shift_s: f64, duration_s: f64 },

    #[error("cutoff out of range: {0}")]
    CutoffOutOfRange(String),

    #[error("requested {requested} components exceeds rank bound {bound}")]
    RankBoundExceeded { requested: usize, bound: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate projection basis: {0}")]
    DegenerateBasis(String),

    #[error("histogram error: {0}")]
    Histogram(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("rank-deficient Jacobian in least-squares fit")]
    RankDeficientJacobian,

    #[error("not enough samples: {found} (need at least {min})")]
    NotEnoughSamples { found: usize, min: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density not normalized: integral = {integral}")]
    Unnormalized { integral: f64 },

    #[error("class {0} missing from fit (zero weight)")]
    MissingClass(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (fits, decompositions) rather than
    /// of input data or I/O. The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateFit
                | Error::VertexOutsideWindow { .. }
                | Error::NonConvergence { .. }
                | Error::RankDeficientJacobian
                | Error::DegenerateBasis(..)
                | Error::DegenerateInput(..)
                | Error::RankBoundExceeded { .. }
        ) || matches!(self, Error::Alignment { source, .. } if source.is_numerical())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
