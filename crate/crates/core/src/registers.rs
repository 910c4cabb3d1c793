//! Shared atomic read/write registers.
//!
//! Every metered access touches exactly one cell. The per-process counters are
//! simulation bookkeeping: the adversary and the checkers may look at them, the
//! simulated processes never do.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::types::{put_varint, JobId, ProcessId};

/// Per-process tally of shared-memory accesses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessCount {
    pub reads: u64,
    pub writes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SharedMemory {
    n: u32,
    m: u32,
    next: Vec<u32>,
    /// Row-major `m x n`; row `q` is written only by process `q`.
    done: Vec<u32>,
    flag: Option<bool>,
    wa: Option<Vec<u8>>,
    counters: Vec<AccessCount>,
}

impl SharedMemory {
    /// Plain memory: `next` and `done` only.
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if m == 0 {
            return Err(SimError::Config("need at least one process".into()));
        }
        let cells =
            (n as usize).checked_mul(m as usize).ok_or_else(|| SimError::Config("done matrix too large".into()))?;
        Ok(SharedMemory {
            n,
            m,
            next: vec![0; m as usize],
            done: vec![0; cells],
            flag: None,
            wa: None,
            counters: vec![AccessCount::default(); m as usize],
        })
    }

    /// Adds the termination flag used by the flagged variant.
    pub fn with_flag(mut self) -> Self {
        self.flag = Some(false);
        self
    }

    /// Adds a Write-All array of `len` cells.
    pub fn with_write_all(mut self, len: u32) -> Self {
        self.wa = Some(vec![0; len as usize]);
        self
    }

    /// Installs an existing Write-All array, carried over from an earlier
    /// memory region.
    pub fn with_write_all_array(mut self, wa: Vec<u8>) -> Self {
        self.wa = Some(wa);
        self
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    fn check_pid(&self, p: ProcessId) -> Result<usize> {
        if p.0 == 0 || p.0 > self.m {
            return Err(SimError::Config(format!("process id {} outside 1..={}", p.0, self.m)));
        }
        Ok(p.index())
    }

    fn cell(&self, q: usize, j: u32) -> Result<usize> {
        if j == 0 || j > self.n {
            return Err(SimError::Config(format!("done index {j} outside 1..={}", self.n)));
        }
        Ok(q * self.n as usize + (j as usize - 1))
    }

    pub fn read_next(&mut self, reader: ProcessId, q: ProcessId) -> Result<u32> {
        let r = self.check_pid(reader)?;
        let q = self.check_pid(q)?;
        self.counters[r].reads += 1;
        Ok(self.next[q])
    }

    pub fn write_next(&mut self, p: ProcessId, value: JobId) -> Result<()> {
        let i = self.check_pid(p)?;
        if value == 0 {
            return Err(SimError::Invariant(format!("{p} tried to reset next to 0")));
        }
        if value > self.n + 1 {
            return Err(SimError::Config(format!("next value {value} outside 1..={}", self.n + 1)));
        }
        self.counters[i].writes += 1;
        self.next[i] = value;
        Ok(())
    }

    pub fn read_done(&mut self, reader: ProcessId, q: ProcessId, j: u32) -> Result<u32> {
        let r = self.check_pid(reader)?;
        let q = self.check_pid(q)?;
        let c = self.cell(q, j)?;
        self.counters[r].reads += 1;
        Ok(self.done[c])
    }

    /// Appends `job` at slot `j` of row `p`. Enforces write-once and the
    /// prefix shape of the row.
    pub fn write_done(&mut self, p: ProcessId, j: u32, job: JobId) -> Result<()> {
        let i = self.check_pid(p)?;
        let c = self.cell(i, j)?;
        if job == 0 || job > self.n {
            return Err(SimError::Invariant(format!("{p} wrote job {job} outside 1..={}", self.n)));
        }
        if self.done[c] != 0 {
            return Err(SimError::Invariant(format!("done[{}][{j}] already holds {}", p.0, self.done[c])));
        }
        if j > 1 && self.done[c - 1] == 0 {
            return Err(SimError::Invariant(format!("done[{}][{j}] written before done[{}][{}]", p.0, p.0, j - 1)));
        }
        self.counters[i].writes += 1;
        self.done[c] = job;
        Ok(())
    }

    pub fn read_flag(&mut self, reader: ProcessId) -> Result<bool> {
        let r = self.check_pid(reader)?;
        let flag = self.flag.ok_or_else(|| SimError::Config("memory has no termination flag".into()))?;
        self.counters[r].reads += 1;
        Ok(flag)
    }

    pub fn raise_flag(&mut self, p: ProcessId) -> Result<()> {
        let i = self.check_pid(p)?;
        match self.flag.as_mut() {
            Some(flag) => {
                self.counters[i].writes += 1;
                *flag = true;
                Ok(())
            }
            None => Err(SimError::Config("memory has no termination flag".into())),
        }
    }

    /// Writes 1 into Write-All cell `i` (1-based).
    pub fn wa_write(&mut self, p: ProcessId, i: u32) -> Result<()> {
        let idx = self.check_pid(p)?;
        let wa = self.wa.as_mut().ok_or_else(|| SimError::Config("memory has no Write-All array".into()))?;
        if i == 0 || i as usize > wa.len() {
            return Err(SimError::Config(format!("Write-All index {i} outside 1..={}", wa.len())));
        }
        self.counters[idx].writes += 1;
        wa[i as usize - 1] = 1;
        Ok(())
    }

    // Unmetered observation, for the adversary and the checkers only.

    pub fn peek_next(&self, q: ProcessId) -> u32 {
        self.next[q.index()]
    }

    pub fn done_row(&self, q: ProcessId) -> &[u32] {
        let start = q.index() * self.n as usize;
        &self.done[start..start + self.n as usize]
    }

    pub fn next_cells(&self) -> &[u32] {
        &self.next
    }

    pub fn flag(&self) -> Option<bool> {
        self.flag
    }

    pub fn write_all(&self) -> Option<&[u8]> {
        self.wa.as_deref()
    }

    pub fn take_write_all(&mut self) -> Option<Vec<u8>> {
        self.wa.take()
    }

    pub fn access(&self, p: ProcessId) -> AccessCount {
        self.counters[p.index()]
    }

    pub fn total_access(&self) -> AccessCount {
        self.counters.iter().fold(AccessCount::default(), |acc, c| AccessCount {
            reads: acc.reads + c.reads,
            writes: acc.writes + c.writes,
        })
    }

    /// Canonical byte encoding of the register contents (counters excluded).
    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        for &v in self.next.iter().chain(self.done.iter()) {
            put_varint(out, u64::from(v));
        }
        out.push(match self.flag {
            None => 2,
            Some(f) => f as u8,
        });
        if let Some(wa) = &self.wa {
            out.extend_from_slice(wa);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(p: u32) -> ProcessId {
        ProcessId(p)
    }

    #[test]
    fn next_register_semantics() {
        let mut shm = SharedMemory::new(10, 2).unwrap();
        assert_eq!(shm.read_next(pid(1), pid(2)).unwrap(), 0);
        shm.write_next(pid(2), 5).unwrap();
        assert_eq!(shm.read_next(pid(1), pid(2)).unwrap(), 5);

        shm.write_next(pid(1), 3).unwrap();
        assert_eq!(shm.read_next(pid(2), pid(1)).unwrap(), 3);
        shm.write_next(pid(1), 7).unwrap();
        assert_eq!(shm.read_next(pid(2), pid(1)).unwrap(), 7);
    }

    #[test]
    fn reads_are_metered_per_reader() {
        let mut shm = SharedMemory::new(4, 3).unwrap();
        let before = shm.access(pid(1)).reads;
        shm.read_next(pid(1), pid(2)).unwrap();
        assert_eq!(shm.access(pid(1)).reads, before + 1);
        assert_eq!(shm.access(pid(2)).reads, 0);
        shm.write_next(pid(3), 1).unwrap();
        assert_eq!(shm.total_access(), AccessCount { reads: 1, writes: 1 });
    }

    #[test]
    fn zero_next_write_is_rejected() {
        let mut shm = SharedMemory::new(10, 2).unwrap();
        assert!(matches!(shm.write_next(pid(1), 0), Err(SimError::Invariant(_))));
        // n + 1 is in the declared domain.
        shm.write_next(pid(1), 11).unwrap();
        assert!(shm.write_next(pid(1), 12).is_err());
    }

    #[test]
    fn out_of_range_ids() {
        let mut shm = SharedMemory::new(10, 2).unwrap();
        assert!(matches!(shm.read_next(pid(3), pid(1)), Err(SimError::Config(_))));
        assert!(matches!(shm.read_next(pid(1), pid(0)), Err(SimError::Config(_))));
        assert!(matches!(shm.read_done(pid(1), pid(2), 11), Err(SimError::Config(_))));
        assert!(matches!(shm.read_done(pid(1), pid(2), 0), Err(SimError::Config(_))));
    }

    #[test]
    fn done_cells() {
        let mut shm = SharedMemory::new(10, 2).unwrap();
        assert_eq!(shm.read_done(pid(1), pid(2), 1).unwrap(), 0);
        shm.write_done(pid(2), 1, 9).unwrap();
        assert_eq!(shm.read_done(pid(1), pid(2), 1).unwrap(), 9);
        shm.write_done(pid(1), 1, 4).unwrap();
        assert_eq!(shm.read_done(pid(2), pid(1), 1).unwrap(), 4);
    }

    #[test]
    fn done_prefix_and_write_once() {
        let mut shm = SharedMemory::new(10, 2).unwrap();
        assert!(matches!(shm.write_done(pid(1), 2, 5), Err(SimError::Invariant(_))));
        shm.write_done(pid(1), 1, 4).unwrap();
        assert!(matches!(shm.write_done(pid(1), 1, 4), Err(SimError::Invariant(_))));
        shm.write_done(pid(1), 2, 5).unwrap();
        assert_eq!(shm.done_row(pid(1))[..3], [4, 5, 0]);
    }

    #[test]
    fn flag_is_monotone() {
        let mut shm = SharedMemory::new(3, 2).unwrap().with_flag();
        assert!(!shm.read_flag(pid(1)).unwrap());
        shm.raise_flag(pid(2)).unwrap();
        assert!(shm.read_flag(pid(1)).unwrap());
        shm.raise_flag(pid(1)).unwrap();
        assert!(shm.read_flag(pid(2)).unwrap());
        assert!(SharedMemory::new(3, 2).unwrap().read_flag(pid(1)).is_err());
    }

    #[test]
    fn write_all_cells() {
        let mut shm = SharedMemory::new(4, 2).unwrap().with_write_all(4);
        shm.wa_write(pid(1), 3).unwrap();
        shm.wa_write(pid(2), 3).unwrap();
        assert_eq!(shm.write_all().unwrap(), &[0, 0, 1, 0]);
        assert_eq!(shm.total_access().writes, 2);
        assert!(shm.wa_write(pid(1), 5).is_err());
    }
}
