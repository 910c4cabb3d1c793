//! Checkers over finished traces: at-most-once, effectiveness, collision
//! bounds, done-row consistency and work recomputation.
//!
//! All checks read the event log, so traces must be recorded at
//! [`TraceLevel::Events`] or above; work recomputation needs
//! [`TraceLevel::Full`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::automaton::WitnessKind;
use crate::trace::{Event, ExecutionTrace, TraceLevel, WorkReport};
use crate::types::{log_factor, JobId, ProcessId};

/// Where a `do` happened: level index, step, process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoSite {
    pub level: u32,
    pub step: u64,
    pub pid: ProcessId,
}

/// A base job performed more than once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmoViolation {
    pub job: JobId,
    pub sites: Vec<DoSite>,
}

fn base_do_sites<'a>(traces: impl IntoIterator<Item = &'a ExecutionTrace>) -> HashMap<JobId, Vec<DoSite>> {
    let mut sites: HashMap<JobId, Vec<DoSite>> = HashMap::new();
    for tr in traces {
        for e in &tr.events {
            if let Event::Do { step, pid, base_jobs, .. } = e {
                for &b in base_jobs {
                    sites.entry(b).or_default().push(DoSite { level: tr.level, step: *step, pid: *pid });
                }
            }
        }
    }
    sites
}

/// Every base job is performed at most once in `tr`. Reports the smallest
/// offending job.
pub fn check_at_most_once(tr: &ExecutionTrace) -> Result<(), AmoViolation> {
    check_at_most_once_levels(std::slice::from_ref(tr))
}

/// At-most-once across all levels of an iterated run: super-jobs are
/// expanded to their base jobs before counting.
pub fn check_at_most_once_levels(traces: &[ExecutionTrace]) -> Result<(), AmoViolation> {
    let sites = base_do_sites(traces);
    match sites.into_iter().filter(|(_, s)| s.len() > 1).min_by_key(|(j, _)| *j) {
        None => Ok(()),
        Some((job, sites)) => Err(AmoViolation { job, sites }),
    }
}

/// Distinct base jobs with at least one `do`.
pub fn effectiveness(tr: &ExecutionTrace) -> u64 {
    effectiveness_levels(std::slice::from_ref(tr))
}

pub fn effectiveness_levels(traces: &[ExecutionTrace]) -> u64 {
    base_do_sites(traces).len() as u64
}

/// `n - (beta + m - 2)`, floored at zero.
pub fn effectiveness_bound(n: u32, m: u32, beta: u32) -> u64 {
    (u64::from(n) + 2).saturating_sub(u64::from(beta) + u64::from(m)).min(u64::from(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectivenessCheck {
    pub done: u64,
    pub bound: u64,
    /// No algorithm can guarantee more than `n - f` jobs.
    pub universal: u64,
    /// `universal - done`, how far the run is from the best possible.
    pub headroom: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectivenessError {
    /// The bound only covers complete fair executions.
    Incomplete,
    Shortfall(EffectivenessCheck),
}

pub fn check_effectiveness_bound(tr: &ExecutionTrace) -> Result<EffectivenessCheck, EffectivenessError> {
    if !tr.is_complete() {
        return Err(EffectivenessError::Incomplete);
    }
    let done = effectiveness(tr);
    let bound = effectiveness_bound(tr.n, tr.m, tr.beta);
    let universal = u64::from(tr.n - tr.f.min(tr.n));
    let check =
        EffectivenessCheck { done, bound, universal, headroom: universal.saturating_sub(done), ok: done >= bound };
    if check.ok {
        Ok(check)
    } else {
        Err(EffectivenessError::Shortfall(check))
    }
}

/// The online work counters of the trace.
pub fn work(tr: &ExecutionTrace) -> WorkReport {
    tr.work
}

/// Recomputes work from the transition records alone. `None` unless the
/// trace was recorded in full.
pub fn recompute_work(tr: &ExecutionTrace) -> Option<WorkReport> {
    if tr.record != TraceLevel::Full {
        return None;
    }
    let (mut t, mut r, mut w, mut s, mut k) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (_, _, c) in tr.transitions() {
        t += 1;
        r += u64::from(c.reads);
        w += u64::from(c.writes);
        s += u64::from(c.set_ops);
        k += u64::from(c.rank_terms);
    }
    Some(WorkReport::from_counts(u64::from(tr.n), t, r, w, s, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionRecord {
    pub step: u64,
    pub pid: ProcessId,
    pub with: ProcessId,
    pub job: JobId,
    pub witness: WitnessKind,
}

/// Collisions per ordered pair `(p, q)`: `p` abandoned a job after seeing
/// `q` announce or complete it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionLedger {
    pub m: u32,
    /// Row-major `m x m`, `counts[(p-1)*m + (q-1)]`.
    pub counts: Vec<u64>,
    pub records: Vec<CollisionRecord>,
}

impl CollisionLedger {
    pub fn from_trace(tr: &ExecutionTrace) -> Self {
        let m = tr.m;
        let mut counts = vec![0; (m * m) as usize];
        let mut records = Vec::new();
        for e in &tr.events {
            if let Event::CollisionWitness { step, pid, with, job, witness } = *e {
                counts[pid.index() * m as usize + with.index()] += 1;
                records.push(CollisionRecord { step, pid, with, job, witness });
            }
        }
        CollisionLedger { m, counts, records }
    }

    pub fn count(&self, p: ProcessId, q: ProcessId) -> u64 {
        self.counts[p.index() * self.m as usize + q.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `2 * ceil(n / (m * |q - p|))`.
pub fn pair_cap(n: u32, m: u32, p: ProcessId, q: ProcessId) -> u64 {
    let d = u64::from(p.0.abs_diff(q.0)) * u64::from(m);
    2 * u64::from(n).div_ceil(d)
}

/// `4 (n + 1) L(m)` for `m >= 2`; no collisions are possible with one process.
pub fn total_cap(n: u32, m: u32) -> u64 {
    if m < 2 {
        0
    } else {
        4 * (u64::from(n) + 1) * log_factor(u64::from(m))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExcess {
    pub p: ProcessId,
    pub q: ProcessId,
    pub count: u64,
    pub cap: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSummary {
    /// The bounds are only claimed for `beta >= 3 m^2`.
    pub applicable: bool,
    pub total: u64,
    pub total_cap: u64,
    /// Largest `count / cap` over ordered pairs.
    pub max_pair_ratio: f64,
    pub worst_pair: Option<(ProcessId, ProcessId)>,
    pub excess: Vec<PairExcess>,
}

impl CollisionSummary {
    pub fn ok(&self) -> bool {
        !self.applicable || (self.excess.is_empty() && self.total <= self.total_cap)
    }
}

pub fn collision_summary(tr: &ExecutionTrace) -> CollisionSummary {
    let ledger = CollisionLedger::from_trace(tr);
    let (n, m) = (tr.n, tr.m);
    let mut summary = CollisionSummary {
        applicable: u64::from(tr.beta) >= 3 * u64::from(m) * u64::from(m),
        total: ledger.total(),
        total_cap: total_cap(n, m),
        max_pair_ratio: 0.0,
        worst_pair: None,
        excess: Vec::new(),
    };
    for p in ProcessId::all(m) {
        for q in ProcessId::all(m).filter(|&q| q != p) {
            let count = ledger.count(p, q);
            let cap = pair_cap(n, m, p, q);
            let ratio = count as f64 / cap as f64;
            if ratio > summary.max_pair_ratio {
                summary.max_pair_ratio = ratio;
                summary.worst_pair = Some((p, q));
            }
            if count > cap {
                summary.excess.push(PairExcess { p, q, count, cap });
            }
        }
    }
    summary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CollisionCheck {
    NotApplicable,
    Ok(CollisionSummary),
    Violated(CollisionSummary),
}

/// Per-pair and total collision caps, for traces with `beta >= 3 m^2`.
pub fn check_collision_bounds(tr: &ExecutionTrace) -> CollisionCheck {
    let s = collision_summary(tr);
    if !s.applicable {
        CollisionCheck::NotApplicable
    } else if s.ok() {
        CollisionCheck::Ok(s)
    } else {
        CollisionCheck::Violated(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoneRowMismatch {
    pub pid: ProcessId,
    pub slot: u32,
    pub found: JobId,
    /// The job of the `slot`-th `do` by `pid`, if there was one by then.
    pub expected: Option<JobId>,
}

/// Row `q` of `done` lists exactly the jobs `q` performed, in order, each
/// written after its `do`; only the last `do` may lack its entry.
pub fn check_done_rows_vs_do_events(tr: &ExecutionTrace) -> Result<(), DoneRowMismatch> {
    let m = tr.m as usize;
    let mut performed: Vec<Vec<JobId>> = vec![Vec::new(); m];
    for e in &tr.events {
        match *e {
            Event::Do { pid, job, .. } => performed[pid.index()].push(job),
            Event::DoneWrite { pid, slot, job, .. } => {
                let expected = performed[pid.index()].get(slot as usize - 1).copied();
                if expected != Some(job) {
                    return Err(DoneRowMismatch { pid, slot, found: job, expected });
                }
            }
            _ => {}
        }
    }
    for (i, row) in tr.done_rows.iter().enumerate() {
        let pid = ProcessId(i as u32 + 1);
        for (k, &job) in row.iter().enumerate() {
            let expected = performed[i].get(k).copied();
            if expected != Some(job) {
                return Err(DoneRowMismatch { pid, slot: k as u32 + 1, found: job, expected });
            }
        }
        if row.len() + 1 < performed[i].len() {
            let k = row.len();
            return Err(DoneRowMismatch { pid, slot: k as u32 + 1, found: 0, expected: Some(performed[i][k]) });
        }
    }
    Ok(())
}
