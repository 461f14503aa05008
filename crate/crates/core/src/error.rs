use thiserror::Error;

/// Errors surfaced by the kernel, mapper and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gating parameter {0} outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("cannot merge an empty list of softmax partials")]
    EmptyMerge,

    #[error("cannot build metadata for an empty page")]
    EmptyPage,

    #[error("bank ({row}, {col}) outside {rows}x{cols} mesh")]
    CoordOutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },

    #[error("page id {0} not present in interleave map")]
    UnknownPageId(u64),

    #[error("importance update has {got} entries for {expected} pages")]
    MisalignedImportance { expected: usize, got: usize },

    #[error("unknown builtin model '{0}'")]
    UnknownModel(String),

    #[error("tiling infeasible: {0}")]
    InfeasibleTiling(String),

    #[error("no decomposition of {n_heads} heads into distinct divisors of {n_banks}")]
    InfeasibleDistinctDecomposition { n_heads: usize, n_banks: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("plan/model mismatch: {0}")]
    PlanMismatch(String),

    #[error("simulation invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
