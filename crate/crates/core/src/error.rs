use thiserror::Error;

/// Errors surfaced by the scheduling, modelling, search, and codec layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("order string has length {len}; expected n*n hex digits with n in {{1,2,3,4}}")]
    InvalidOrderLength { len: usize },

    #[error("order string contains non-hex character {ch:?}")]
    InvalidOrderDigit { ch: char },

    #[error("order is not a permutation of 0..{expected}: stage {stage} {problem}")]
    NotAPermutation {
        expected: usize,
        stage: usize,
        problem: &'static str,
    },

    #[error("patch side {n} unsupported; expected 1 <= n <= 4")]
    UnsupportedPatchSize { n: usize },

    #[error("stage map has {cells} cells but stage {stage} is unassigned")]
    EmptyStage { stage: usize, cells: usize },

    #[error("stage {stage} out of range; map has {num_stages} stages")]
    StageOutOfRange { stage: usize, num_stages: usize },

    #[error("stage {stage} cells produce differing context masks; stage map unsupported")]
    NonUniformStageMask { stage: usize },

    #[error("grid {h}x{w} too small: {reason}")]
    GridTooSmall { h: usize, w: usize, reason: &'static str },

    #[error("dimensions {h}x{w} not divisible by patch side {n}")]
    DimsNotDivisible { h: usize, w: usize, n: usize },

    #[error("invalid latent dimensions {h}x{w}: {reason}")]
    InvalidDims { h: usize, w: usize, reason: &'static str },

    #[error("invalid field model: {reason}")]
    InvalidModel { reason: String },

    #[error("exact sampling requires the separable covariance kind")]
    UnsupportedSampling,

    #[error("conditional variance non-positive after jitter; model numerically degenerate")]
    DegenerateModel,

    #[error("exhaustive enumeration of {count} orders for n={n} requires allow_large")]
    EnumerationTooLarge { n: usize, count: u64 },

    #[error("exhaustive search infeasible for n={n} (n^2! orders); use dp or branch-and-bound")]
    ExhaustiveInfeasible { n: usize },

    #[error("CDF bin {index} has zero width; CDF construction bug")]
    ZeroWidthBin { index: usize },

    #[error("bitstream payload truncated")]
    TruncatedPayload,

    #[error("malformed bitstream header: {reason}")]
    BadHeader { reason: String },

    #[error("bitstream header does not match supplied model ({reason})")]
    HeaderModelMismatch { reason: String },

    #[error("latency fit underdetermined: need at least two modes with distinct stage counts")]
    UnderdeterminedFit,

    #[error("invalid latency model: {reason}")]
    InvalidLatencyModel { reason: &'static str },
}
