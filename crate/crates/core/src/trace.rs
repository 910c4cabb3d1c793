//! Execution traces: the ordered event log of one run (or one level of an
//! iterated run) plus online work counters and a final memory snapshot.

use serde::{Deserialize, Serialize};

use crate::automaton::{Action, Mode, Status, StepCost, WitnessKind};
use crate::types::{log_factor, JobId, ProcessId};

/// How much of an execution gets recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Every transition plus every semantic event.
    #[default]
    Full,
    /// Semantic events only (do, done writes, crashes, collisions, ...).
    Events,
    /// Nothing; the explorer keeps what it needs in the state itself.
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Transition {
        step: u64,
        pid: ProcessId,
        action: Action,
        before: Status,
        after: Status,
        cost: StepCost,
    },
    Do {
        step: u64,
        pid: ProcessId,
        job: JobId,
        /// Base jobs covered by `job`; `[job]` at the base level.
        base_jobs: Vec<JobId>,
    },
    DoneWrite {
        step: u64,
        pid: ProcessId,
        slot: u32,
        job: JobId,
    },
    Crash {
        step: u64,
        pid: ProcessId,
        /// False when the victim had already ended.
        effective: bool,
    },
    CollisionWitness {
        step: u64,
        pid: ProcessId,
        with: ProcessId,
        job: JobId,
        witness: WitnessKind,
    },
    FlagRaised {
        step: u64,
        pid: ProcessId,
    },
    Terminated {
        step: u64,
        pid: ProcessId,
        leftover: Option<Vec<JobId>>,
    },
}

impl Event {
    pub fn step(&self) -> u64 {
        match self {
            Event::Transition { step, .. }
            | Event::Do { step, .. }
            | Event::DoneWrite { step, .. }
            | Event::Crash { step, .. }
            | Event::CollisionWitness { step, .. }
            | Event::FlagRaised { step, .. }
            | Event::Terminated { step, .. } => *step,
        }
    }
}

/// Work in basic-operation units. `weighted_total = shm_reads + shm_writes +
/// set_ops * L(n) + rank_charges`, with `rank_charges` already weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkReport {
    pub transitions: u64,
    pub shm_reads: u64,
    pub shm_writes: u64,
    pub set_ops: u64,
    pub rank_charges: u64,
    pub weighted_total: u64,
}

impl WorkReport {
    /// Builds a report from raw tallies for a job universe of size `n`.
    pub fn from_counts(n: u64, transitions: u64, reads: u64, writes: u64, set_ops: u64, rank_terms: u64) -> Self {
        let l = log_factor(n);
        let rank_charges = rank_terms * l;
        WorkReport {
            transitions,
            shm_reads: reads,
            shm_writes: writes,
            set_ops,
            rank_charges,
            weighted_total: reads + writes + set_ops * l + rank_charges,
        }
    }

    pub fn accumulate(&mut self, other: &WorkReport) {
        self.transitions += other.transitions;
        self.shm_reads += other.shm_reads;
        self.shm_writes += other.shm_writes;
        self.set_ops += other.set_ops;
        self.rank_charges += other.rank_charges;
        self.weighted_total += other.weighted_total;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// Size of the job universe of this execution (super-jobs at a level).
    pub n: u32,
    pub m: u32,
    pub beta: u32,
    pub f: u32,
    pub mode: Mode,
    /// Level index within an iterated run; 0 for a stand-alone run.
    pub level: u32,
    pub record: TraceLevel,
    pub events: Vec<Event>,
    /// Adversary moves applied (steps and crashes).
    pub moves: u64,
    pub crashes: u32,
    pub final_status: Vec<Status>,
    /// Online counters gathered from registers and process states.
    pub work: WorkReport,
    /// Final contents of each `done` row (nonzero prefix only).
    pub done_rows: Vec<Vec<JobId>>,
    /// The step budget ran out before every live process ended.
    pub truncated: bool,
    /// The adversary stopped the run early.
    pub halted: bool,
}

impl ExecutionTrace {
    /// An empty trace, used by checkers' tests and by replay of empty paths.
    pub fn empty(n: u32, m: u32) -> Self {
        ExecutionTrace {
            n,
            m,
            beta: 0,
            f: 0,
            mode: Mode::Plain,
            level: 0,
            record: TraceLevel::Full,
            events: Vec::new(),
            moves: 0,
            crashes: 0,
            final_status: vec![Status::CompNext; m as usize],
            work: WorkReport::default(),
            done_rows: vec![Vec::new(); m as usize],
            truncated: false,
            halted: false,
        }
    }

    /// Every live process ended and the run was neither cut short nor halted.
    pub fn is_complete(&self) -> bool {
        !self.truncated && !self.halted && self.final_status.iter().all(|s| s.is_terminal())
    }

    pub fn do_events(&self) -> impl Iterator<Item = (ProcessId, JobId, &[JobId])> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Do { pid, job, base_jobs, .. } => Some((*pid, *job, base_jobs.as_slice())),
            _ => None,
        })
    }

    pub fn transitions(&self) -> impl Iterator<Item = (ProcessId, Action, StepCost)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Transition { pid, action, cost, .. } => Some((*pid, *action, *cost)),
            _ => None,
        })
    }
}
