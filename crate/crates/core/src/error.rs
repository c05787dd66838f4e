//! Error types shared across the crate.

use crate::lattice::Vertex;
use thiserror::Error;

/// Errors produced by model construction, queries and the samplers.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("spin at {0} is unassigned")]
    UnassignedSpin(Vertex),

    #[error("vertex {0} is not a member of the queried set")]
    VertexNotInSet(Vertex),

    #[error("vertex {0} has infinitely many incident hyperedges")]
    InfiniteSupport(Vertex),

    #[error("sequences have different centers: {0} vs {1}")]
    CenterMismatch(Vertex, Vertex),

    #[error("interaction is not pairwise: hyperedge {0:?} has {1} vertices")]
    NotPairwise(Vec<Vertex>, usize),

    #[error("vertex {vertex} has {count} hyperedges, over the search cap {cap}")]
    TooManyHyperedges {
        vertex: Vertex,
        count: usize,
        cap: usize,
    },

    #[error("refinement block has {size} vertices, over the cap {cap}")]
    BlockTooLarge { size: usize, cap: usize },

    #[error("no tail bound available for this sequence/interaction pair: {0}")]
    TailNotBoundable(String),

    #[error("backward sketch did not terminate within {0} steps")]
    StepLimitExceeded(u64),

    #[error("sampling window is empty")]
    EmptyWindow,

    #[error("forward spin invariant violated: {0}")]
    InternalInvariantViolation(String),

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("enumeration region has {size} vertices, over the cap {cap}")]
    RegionTooLarge { size: usize, cap: usize },

    #[error("exceptional region {{eta > -delta}} is infinite for delta = {delta}")]
    InfiniteExceptionalRegion { delta: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid extinction spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Sequence(#[from] SequenceViolation),
}

/// Violations of the three defining properties of a region sequence.
#[derive(Debug, Error, PartialEq)]
pub enum SequenceViolation {
    #[error("property 1 violated: B(0) must equal {{center}}, got {0:?}")]
    Property1(Vec<Vertex>),

    #[error("property 2 violated at step {step}: increment is empty or not disjoint")]
    Property2 { step: usize },

    #[error("property 3 violated: hyperedge {0:?} is never covered")]
    Property3(Vec<Vertex>),
}

pub type Result<T> = std::result::Result<T, CoreError>;
