use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a job (or super-job) at the current level, `1..=n`.
pub type JobId = u32;

/// 1-based process identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn new(pid: u32) -> Self {
        ProcessId(pid)
    }

    /// Zero-based index for per-process arrays.
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    pub fn all(m: u32) -> impl Iterator<Item = ProcessId> {
        (1..=m).map(ProcessId)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Clamped binary logarithm used by every bound and cost formula:
/// `L(x) = max(1, ceil(log2(x + 1)))`.
pub fn log_factor(x: u64) -> u64 {
    // ceil(log2(x + 1)) is the bit length of x.
    u64::from(u64::BITS - x.leading_zeros()).max(1)
}

/// LEB128 encoding, used for canonical state keys.
pub(crate) fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(x: u64) -> u64 {
        let mut k = 0u64;
        while (1u128 << k) < u128::from(x) + 1 {
            k += 1;
        }
        k.max(1)
    }

    #[test]
    fn log_factor_matches_definition() {
        for x in 0..5000u64 {
            assert_eq!(log_factor(x), oracle(x), "x = {x}");
        }
        assert_eq!(log_factor(1), 1);
        assert_eq!(log_factor(2), 2);
        assert_eq!(log_factor(3), 2);
        assert_eq!(log_factor(4), 3);
        assert_eq!(log_factor(1 << 14), 15);
        assert_eq!(log_factor(u64::MAX), 64);
    }
}

/// Expansion of level job ids into base job ids.
///
/// At the base level a job is its own expansion. At super-job levels each id
/// maps to the sorted base jobs it groups.
#[derive(Debug, Clone, Default)]
pub enum JobMap {
    #[default]
    Identity,
    Table(std::sync::Arc<[Vec<JobId>]>),
}

impl JobMap {
    pub fn base_jobs(&self, id: JobId) -> Vec<JobId> {
        match self {
            JobMap::Identity => vec![id],
            JobMap::Table(t) => t[id as usize - 1].clone(),
        }
    }

    pub fn base_len(&self, id: JobId) -> usize {
        match self {
            JobMap::Identity => 1,
            JobMap::Table(t) => t[id as usize - 1].len(),
        }
    }
}
