//! Per-process transition function of the announce/gather/check algorithm
//! and its flagged variant.
//!
//! One call to [`ProcessState::step`] executes exactly one locally controlled
//! action. Read and write actions touch a single shared cell, except the
//! drain routine of the flagged variant, which performs a full scan.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::ranked_set::RankedSet;
use crate::registers::SharedMemory;
use crate::types::{put_varint, JobId, JobMap, ProcessId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    CompNext,
    SetNext,
    GatherTry,
    GatherDone,
    Check,
    Do,
    Done,
    End,
    Stop,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::End | Status::Stop)
    }

    fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    #[serde(rename = "compNext")]
    CompNext,
    #[serde(rename = "setNext")]
    SetNext,
    #[serde(rename = "gatherTry")]
    GatherTry,
    #[serde(rename = "gatherDone")]
    GatherDone,
    #[serde(rename = "check")]
    Check,
    #[serde(rename = "do")]
    Do,
    #[serde(rename = "done")]
    Done,
    /// Post-barrier rescan requested by the level driver.
    #[serde(rename = "drain")]
    Drain,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::CompNext => "compNext",
            Action::SetNext => "setNext",
            Action::GatherTry => "gatherTry",
            Action::GatherDone => "gatherDone",
            Action::Check => "check",
            Action::Do => "do",
            Action::Done => "done",
            Action::Drain => "drain",
        }
    }
}

/// Which member of the algorithm family a process runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Terminates when fewer than beta jobs remain.
    #[default]
    Plain,
    /// Raises a shared termination flag and returns `FREE \ TRY` on exit.
    Flagged,
    /// Flagged, but returns `FREE` and writes every performed base job into
    /// the Write-All array.
    WriteAll,
    /// Write-All tail: performs every job of a fixed list, then ends.
    Sweep,
}

impl Mode {
    fn flagged(self) -> bool {
        matches!(self, Mode::Flagged | Mode::WriteAll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    /// Saw the job announced in `next[q]`.
    Try,
    /// Saw the job in row `q` of `done` while it was not in TRY.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Witness {
    pub with: ProcessId,
    pub job: JobId,
    pub kind: WitnessKind,
}

/// Basic operations charged to a single action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepCost {
    pub reads: u32,
    pub writes: u32,
    /// Insert, remove and membership operations on the local sets.
    pub set_ops: u32,
    /// `|TRY| + 1` for each rank-with-exclusions call.
    pub rank_terms: u32,
}

impl StepCost {
    fn add(&mut self, other: StepCost) {
        self.reads += other.reads;
        self.writes += other.writes;
        self.set_ops += other.set_ops;
        self.rank_terms += other.rank_terms;
    }
}

/// Externally visible effects of one action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Do { job: JobId },
    DoneWrite { slot: u32, job: JobId },
    Collision(Witness),
    FlagRaised,
    Terminated { leftover: Option<Vec<JobId>> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub action: Action,
    pub before: Status,
    pub after: Status,
    pub cost: StepCost,
    pub outputs: Vec<Output>,
}

#[derive(Debug, Clone)]
pub struct ProcessState {
    pid: ProcessId,
    n: u32,
    m: u32,
    beta: u32,
    mode: Mode,
    status: Status,
    free: RankedSet,
    done: RankedSet,
    try_set: RankedSet,
    /// `pos[q]`: next cell of row q to read; `pos[pid]`: next cell to write.
    pos: Vec<u32>,
    next: Option<JobId>,
    tmp: u32,
    q: u32,
    witnesses: Vec<Witness>,
    leftover: Option<Vec<JobId>>,
    tail: VecDeque<JobId>,
    set_ops: u64,
    rank_terms: u64,
    transitions: u64,
    done_actions: u64,
}

impl ProcessState {
    /// Initial state over job universe `1..=n`.
    pub fn new(pid: ProcessId, n: u32, m: u32, beta: u32, mode: Mode) -> Result<Self> {
        if pid.0 == 0 || pid.0 > m {
            return Err(SimError::Config(format!("process id {} outside 1..={m}", pid.0)));
        }
        Ok(ProcessState {
            pid,
            n,
            m,
            beta,
            mode,
            status: Status::CompNext,
            free: RankedSet::from_range(n),
            done: RankedSet::new(),
            try_set: RankedSet::new(),
            pos: vec![1; m as usize],
            next: None,
            tmp: 0,
            q: 1,
            witnesses: Vec::new(),
            leftover: None,
            tail: VecDeque::new(),
            set_ops: 0,
            rank_terms: 0,
            transitions: 0,
            done_actions: 0,
        })
    }

    /// A process that performs every job in `jobs` and then ends.
    pub fn sweep(pid: ProcessId, n: u32, m: u32, jobs: Vec<JobId>) -> Result<Self> {
        let mut st = Self::new(pid, 0, m, 0, Mode::Sweep)?;
        st.n = n;
        st.tail = jobs.into();
        st.status = if st.tail.is_empty() { Status::End } else { Status::Do };
        Ok(st)
    }

    /// A process that has already crashed before this phase started.
    pub fn crashed(pid: ProcessId, n: u32, m: u32, mode: Mode) -> Result<Self> {
        let mut st = Self::new(pid, n, m, 0, mode)?;
        st.status = Status::Stop;
        Ok(st)
    }

    pub fn pid(&self) -> ProcessId {
        self.pid
    }
    pub fn status(&self) -> Status {
        self.status
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn beta(&self) -> u32 {
        self.beta
    }
    pub fn free(&self) -> &RankedSet {
        &self.free
    }
    pub fn done_set(&self) -> &RankedSet {
        &self.done
    }
    pub fn try_set(&self) -> &RankedSet {
        &self.try_set
    }
    pub fn pos(&self) -> &[u32] {
        &self.pos
    }
    pub fn next_job(&self) -> Option<JobId> {
        self.next
    }
    pub fn cursor(&self) -> u32 {
        self.q
    }
    pub fn leftover(&self) -> Option<&[JobId]> {
        self.leftover.as_deref()
    }
    pub fn pending_witnesses(&self) -> &[Witness] {
        &self.witnesses
    }
    pub fn set_ops(&self) -> u64 {
        self.set_ops
    }
    pub fn rank_terms(&self) -> u64 {
        self.rank_terms
    }
    pub fn transitions(&self) -> u64 {
        self.transitions
    }
    pub fn done_actions(&self) -> u64 {
        self.done_actions
    }

    /// The unique locally controlled action enabled in the current status.
    pub fn enabled_action(&self) -> Result<Action> {
        Ok(match self.status {
            Status::CompNext => Action::CompNext,
            Status::SetNext => Action::SetNext,
            Status::GatherTry => Action::GatherTry,
            Status::GatherDone => Action::GatherDone,
            Status::Check => Action::Check,
            Status::Do => Action::Do,
            Status::Done => Action::Done,
            Status::End | Status::Stop => return Err(SimError::NoEnabledAction(self.pid)),
        })
    }

    /// Executes the enabled action.
    pub fn step(&mut self, shm: &mut SharedMemory, jobs: &JobMap) -> Result<StepOutcome> {
        let action = self.enabled_action()?;
        let before = self.status;
        let mut cost = StepCost::default();
        let mut outputs = Vec::new();
        match action {
            Action::CompNext => self.step_comp_next(shm, &mut cost, &mut outputs)?,
            Action::SetNext => self.step_set_next(shm, &mut cost)?,
            Action::GatherTry => self.step_gather_try(shm, &mut cost)?,
            Action::GatherDone => self.step_gather_done(shm, &mut cost)?,
            Action::Check => self.step_check(shm, &mut cost, &mut outputs)?,
            Action::Do => self.step_do(shm, jobs, &mut cost, &mut outputs)?,
            Action::Done => self.step_done(shm, &mut cost, &mut outputs)?,
            Action::Drain => unreachable!("drain is never enabled by status"),
        }
        self.set_ops += u64::from(cost.set_ops);
        self.rank_terms += u64::from(cost.rank_terms);
        self.transitions += 1;
        self.debug_check_invariants();
        Ok(StepOutcome { action, before, after: self.status, cost, outputs })
    }

    fn step_comp_next(&mut self, shm: &mut SharedMemory, cost: &mut StepCost, outputs: &mut Vec<Output>) -> Result<()> {
        // |FREE \ TRY| costs one membership test per element of TRY.
        cost.set_ops += self.try_set.len() as u32;
        let available = self.free.len_excluding(&self.try_set);
        if available >= self.beta as usize && available > 0 {
            let rank = self.target_rank(available);
            cost.rank_terms += self.try_set.len() as u32 + 1;
            let job = self.free.select_excluding(&self.try_set, rank)?;
            self.next = Some(job);
            self.q = 1;
            self.try_set.clear();
            self.witnesses.clear();
            self.status = Status::SetNext;
            return Ok(());
        }
        if self.mode.flagged() {
            shm.raise_flag(self.pid)?;
            cost.writes += 1;
            outputs.push(Output::FlagRaised);
            let (leftover, c) = self.drain(shm)?;
            cost.add(c);
            self.status = Status::End;
            outputs.push(Output::Terminated { leftover: Some(leftover) });
        } else {
            self.status = Status::End;
            outputs.push(Output::Terminated { leftover: None });
        }
        Ok(())
    }

    /// Rank of the job this process targets among `FREE \ TRY`, in exact
    /// integer arithmetic: `floor((p-1) * (|FREE| - (m-1)) / m) + 1` when that
    /// quotient is at least one, `p` otherwise.
    fn target_rank(&self, available: usize) -> usize {
        let free = self.free.len() as i64;
        let m = i64::from(self.m);
        let p = i64::from(self.pid.0);
        let spread = free - (m - 1);
        let rank = if spread >= m { (p - 1) * spread / m + 1 } else { p } as usize;
        if (self.beta as usize) < self.m as usize {
            // Below beta = m the rank can exceed the candidate count.
            rank.min(available)
        } else {
            rank
        }
    }

    fn step_set_next(&mut self, shm: &mut SharedMemory, cost: &mut StepCost) -> Result<()> {
        let job = self.next.ok_or_else(|| SimError::Invariant(format!("{} announcing without a job", self.pid)))?;
        shm.write_next(self.pid, job)?;
        cost.writes += 1;
        self.status = Status::GatherTry;
        Ok(())
    }

    fn step_gather_try(&mut self, shm: &mut SharedMemory, cost: &mut StepCost) -> Result<()> {
        if self.q != self.pid.0 {
            let q = ProcessId(self.q);
            let v = shm.read_next(self.pid, q)?;
            cost.reads += 1;
            self.tmp = v;
            // 0 (unset) and the sentinel n+1 are not jobs.
            if (1..=self.n).contains(&v) {
                self.try_set.insert(v);
                cost.set_ops += 1;
                if self.next == Some(v) {
                    self.witnesses.push(Witness { with: q, job: v, kind: WitnessKind::Try });
                }
            }
        }
        if self.q < self.m {
            self.q += 1;
        } else {
            self.q = 1;
            self.status = Status::GatherDone;
        }
        Ok(())
    }

    fn step_gather_done(&mut self, shm: &mut SharedMemory, cost: &mut StepCost) -> Result<()> {
        if self.q != self.pid.0 {
            let q = ProcessId(self.q);
            let slot = self.pos[q.index()];
            let mut advance = true;
            if slot <= self.n {
                let v = shm.read_done(self.pid, q, slot)?;
                cost.reads += 1;
                self.tmp = v;
                if v > 0 {
                    if self.next == Some(v) && !self.try_set.contains(v) {
                        self.witnesses.push(Witness { with: q, job: v, kind: WitnessKind::Done });
                    }
                    self.learn_done(v)?;
                    cost.set_ops += 2;
                    self.pos[q.index()] += 1;
                    advance = false;
                }
            }
            if advance {
                self.q += 1;
            }
        } else {
            self.q += 1;
        }
        if self.q > self.m {
            self.q = 1;
            self.status = Status::Check;
        }
        Ok(())
    }

    fn learn_done(&mut self, job: JobId) -> Result<()> {
        if !self.done.insert(job) || !self.free.remove(job) {
            return Err(SimError::Invariant(format!(
                "{} learned job {job} twice; FREE/DONE partition broken",
                self.pid
            )));
        }
        Ok(())
    }

    fn step_check(&mut self, shm: &mut SharedMemory, cost: &mut StepCost, outputs: &mut Vec<Output>) -> Result<()> {
        if self.mode.flagged() {
            cost.reads += 1;
            if shm.read_flag(self.pid)? {
                self.witnesses.clear();
                let (leftover, c) = self.drain(shm)?;
                cost.add(c);
                self.status = Status::End;
                outputs.push(Output::Terminated { leftover: Some(leftover) });
                return Ok(());
            }
        }
        let job = self.next.ok_or_else(|| SimError::Invariant(format!("{} checking without a job", self.pid)))?;
        cost.set_ops += 2;
        if !self.try_set.contains(job) && !self.done.contains(job) {
            self.status = Status::Do;
        } else {
            outputs.extend(self.witnesses.drain(..).map(Output::Collision));
            self.status = Status::CompNext;
        }
        Ok(())
    }

    fn step_do(
        &mut self,
        shm: &mut SharedMemory,
        jobs: &JobMap,
        cost: &mut StepCost,
        outputs: &mut Vec<Output>,
    ) -> Result<()> {
        let job = if self.mode == Mode::Sweep {
            self.tail.pop_front().ok_or_else(|| SimError::Invariant(format!("{} sweeping an empty list", self.pid)))?
        } else {
            self.next.ok_or_else(|| SimError::Invariant(format!("{} performing without a job", self.pid)))?
        };
        if matches!(self.mode, Mode::WriteAll | Mode::Sweep) {
            for base in jobs.base_jobs(job) {
                shm.wa_write(self.pid, base)?;
                cost.writes += 1;
            }
        }
        outputs.push(Output::Do { job });
        self.status = match self.mode {
            Mode::Sweep if self.tail.is_empty() => {
                outputs.push(Output::Terminated { leftover: None });
                Status::End
            }
            Mode::Sweep => Status::Do,
            _ => Status::Done,
        };
        Ok(())
    }

    fn step_done(&mut self, shm: &mut SharedMemory, cost: &mut StepCost, outputs: &mut Vec<Output>) -> Result<()> {
        let job = self.next.ok_or_else(|| SimError::Invariant(format!("{} recording without a job", self.pid)))?;
        let slot = self.pos[self.pid.index()];
        shm.write_done(self.pid, slot, job)?;
        cost.writes += 1;
        self.learn_done(job)?;
        cost.set_ops += 2;
        self.pos[self.pid.index()] += 1;
        self.done_actions += 1;
        self.status = Status::CompNext;
        outputs.push(Output::DoneWrite { slot, job });
        Ok(())
    }

    /// Input action `stop`. Returns `false` when the process had already
    /// ended, in which case nothing changes.
    pub fn crash(&mut self) -> bool {
        match self.status {
            Status::End | Status::Stop => false,
            _ => {
                self.status = Status::Stop;
                true
            }
        }
    }

    /// Full fresh scan used on exit from the flagged variant: rebuilds TRY
    /// from every other `next` cell, polls every other `done` row to
    /// exhaustion, and returns the jobs this process may hand to the next
    /// level. In [`Mode::Flagged`] that is `FREE \ (TRY ∪ {next[pid]})`; in
    /// [`Mode::WriteAll`] it is `FREE`.
    pub fn drain(&mut self, shm: &mut SharedMemory) -> Result<(Vec<JobId>, StepCost)> {
        let me = self.pid;
        self.scan(shm, |q| q != me, true)
    }

    /// Rescan after the level barrier. Every process has ended or crashed by
    /// then, so only jobs announced by processes in `crashed` can have been
    /// performed without being recorded; those are the only ones withheld.
    pub fn barrier_drain(&mut self, shm: &mut SharedMemory, crashed: &[ProcessId]) -> Result<(Vec<JobId>, StepCost)> {
        let (leftover, cost) = self.scan(shm, |q| crashed.contains(&q), false)?;
        self.set_ops += u64::from(cost.set_ops);
        self.transitions += 1;
        Ok((leftover, cost))
    }

    fn scan(
        &mut self,
        shm: &mut SharedMemory,
        withhold: impl Fn(ProcessId) -> bool,
        withhold_own: bool,
    ) -> Result<(Vec<JobId>, StepCost)> {
        let mut cost = StepCost::default();
        self.try_set.clear();
        let mut own = 0;
        for q in ProcessId::all(self.m) {
            let v = shm.read_next(self.pid, q)?;
            cost.reads += 1;
            if q == self.pid {
                own = v;
            } else if withhold(q) && (1..=self.n).contains(&v) {
                self.try_set.insert(v);
                cost.set_ops += 1;
            }
        }
        let me = self.pid;
        for q in ProcessId::all(self.m).filter(|&q| q != me) {
            while self.pos[q.index()] <= self.n {
                let v = shm.read_done(self.pid, q, self.pos[q.index()])?;
                cost.reads += 1;
                if v == 0 {
                    break;
                }
                self.learn_done(v)?;
                cost.set_ops += 2;
                self.pos[q.index()] += 1;
            }
        }
        cost.set_ops += self.free.len() as u32;
        let leftover: Vec<JobId> = match self.mode {
            Mode::WriteAll => self.free.to_vec(),
            _ => self.free.iter().filter(|&j| !(withhold_own && j == own) && !self.try_set.contains(j)).collect(),
        };
        self.leftover = Some(leftover.clone());
        Ok((leftover, cost))
    }

    fn debug_check_invariants(&self) {
        debug_assert!(
            self.mode == Mode::Sweep || self.free.len() + self.done.len() == self.n as usize,
            "{}: FREE and DONE do not partition 1..={}",
            self.pid,
            self.n
        );
        debug_assert!(self.try_set.len() < self.m as usize, "{}: |TRY| >= m", self.pid);
    }

    /// Checks the state invariants, returning a description of the first one
    /// that fails.
    pub fn check_invariants(&self) -> Result<()> {
        if self.mode != Mode::Sweep {
            if self.free.len() + self.done.len() != self.n as usize {
                return Err(SimError::Invariant(format!("{}: |FREE| + |DONE| != n", self.pid)));
            }
            if let Some(x) = self.done.iter().find(|&x| self.free.contains(x)) {
                return Err(SimError::Invariant(format!("{}: job {x} in FREE and DONE", self.pid)));
            }
        }
        if self.try_set.len() + 1 > self.m as usize {
            return Err(SimError::Invariant(format!("{}: |TRY| >= m", self.pid)));
        }
        if u64::from(self.pos[self.pid.index()]) != 1 + self.done_actions {
            return Err(SimError::Invariant(format!("{}: pos[p] out of step with done actions", self.pid)));
        }
        Ok(())
    }

    /// Canonical encoding of the behaviour-relevant state. `DONE` is implied
    /// by `FREE`; `tmp`, pending witnesses and counters never influence a
    /// later transition and are left out. Two states with equal encodings
    /// have identical futures.
    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.status.code());
        // An ended or crashed process never acts again; the others only
        // see what it left in shared memory.
        if self.status.is_terminal() {
            return;
        }
        // compNext overwrites next before reading it.
        let next = if self.status == Status::CompNext { 0 } else { self.next.unwrap_or(0) };
        put_varint(out, u64::from(next));
        put_varint(out, u64::from(self.q));
        for &p in &self.pos {
            put_varint(out, u64::from(p));
        }
        for set in [&self.free, &self.try_set] {
            put_varint(out, set.len() as u64);
            for x in set {
                put_varint(out, u64::from(x));
            }
        }
        put_varint(out, self.tail.len() as u64);
    }
}
