use thiserror::Error;

use crate::types::ProcessId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    /// Invalid parameters supplied by the caller (bad ids, n < m, f >= m, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A shared-memory or automaton invariant was broken. Always a bug.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("rank {rank} out of range for a set difference of size {available}")]
    RankOutOfRange { rank: usize, available: usize },

    #[error("process {0} has no enabled locally controlled action")]
    NoEnabledAction(ProcessId),

    /// The adversary issued a move its contract forbids.
    #[error("adversary protocol violation: {0}")]
    Protocol(String),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
