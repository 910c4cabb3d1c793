//! Execution driver. An adversary picks, one move at a time, which process
//! takes its next step or crashes; the engine applies the move and logs it.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, Adversary};
use crate::automaton::{Mode, Output, ProcessState, Status};
use crate::error::{Result, SimError};
use crate::registers::SharedMemory;
use crate::trace::{Event, ExecutionTrace, TraceLevel, WorkReport};
use crate::types::{JobId, JobMap, ProcessId};

/// A scripted crash: at adversary move `at` (0-based), crash `pid`, or a
/// randomly chosen live process when `pid` is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashAt {
    pub at: u64,
    pub pid: Option<ProcessId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    /// Cycle over live processes in pid order.
    #[default]
    RoundRobin,
    /// Uniformly random live process, with a starvation cap of
    /// `m * starvation_factor` moves.
    Random {
        starvation_factor: u32,
        /// Draw `f` crashes at random moves below this horizon (in moves).
        random_crash_horizon: Option<u64>,
    },
    /// The worst-case crash strategy for effectiveness.
    #[serde(rename = "theorem3")]
    WorstCase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Config {
    pub n: u32,
    pub m: u32,
    pub beta: u32,
    /// Crash budget, `0 <= f < m`.
    pub f: u32,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheduler: Scheduler,
    #[serde(default)]
    pub crash_at: Vec<CrashAt>,
    /// Defaults to `64 * n * m * m`.
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub trace: TraceLevel,
}

pub const DEFAULT_STARVATION_FACTOR: u32 = 64;

impl Config {
    pub fn new(n: u32, m: u32, beta: u32, f: u32) -> Self {
        Config {
            n,
            m,
            beta,
            f,
            mode: Mode::Plain,
            seed: 0,
            scheduler: Scheduler::RoundRobin,
            crash_at: Vec::new(),
            max_steps: None,
            trace: TraceLevel::Full,
        }
    }

    pub fn with_scheduler(mut self, scheduler: Scheduler) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_trace(mut self, trace: TraceLevel) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_crashes(mut self, crash_at: Vec<CrashAt>) -> Self {
        self.crash_at = crash_at;
        self
    }

    /// `n >= m >= 1`, `f < m`, `beta >= 1`. `beta < m` is accepted with a
    /// warning since termination is then not guaranteed.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(SimError::Config("m must be at least 1".into()));
        }
        if self.n < self.m {
            return Err(SimError::Config(format!("need n >= m, got n = {} < m = {}", self.n, self.m)));
        }
        if self.f >= self.m {
            return Err(SimError::Config(format!("crash budget f = {} must be below m = {}", self.f, self.m)));
        }
        if self.beta == 0 {
            return Err(SimError::Config("beta must be at least 1".into()));
        }
        if matches!(self.mode, Mode::Sweep) {
            return Err(SimError::Config("sweep mode is internal to the Write-All driver".into()));
        }
        if let Some(c) = self.crash_at.iter().find(|c| c.pid.is_some_and(|p| p.0 == 0 || p.0 > self.m)) {
            return Err(SimError::Config(format!("crash target {:?} outside 1..={}", c.pid, self.m)));
        }
        Ok(())
    }

    pub fn step_budget(&self) -> u64 {
        self.max_steps.unwrap_or_else(|| 64 * u64::from(self.n) * u64::from(self.m) * u64::from(self.m))
    }
}

/// One adversary decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    Step(ProcessId),
    Crash(ProcessId),
    Halt,
}

/// Shared memory plus all process states, with the bookkeeping the adversary
/// and the checkers need. Processes only ever see their own state and the
/// cells they read.
#[derive(Debug, Clone)]
pub struct Simulation {
    shm: SharedMemory,
    procs: Vec<ProcessState>,
    jobs: JobMap,
    n: u32,
    beta: u32,
    mode: Mode,
    level: u32,
    f: u32,
    crashes_used: u32,
    /// Moves applied in earlier phases of the same execution.
    moves_base: u64,
    moves: u64,
    record: TraceLevel,
    events: Vec<Event>,
    /// Number of `do` actions per job of this phase.
    performed: Vec<u32>,
}

impl Simulation {
    /// Fresh plain or flagged execution over jobs `1..=n`.
    pub fn new(cfg: &Config) -> Result<Self> {
        cfg.validate()?;
        if cfg.beta < cfg.m {
            warn!("beta < m: termination not guaranteed (beta = {}, m = {})", cfg.beta, cfg.m);
        }
        let procs = ProcessId::all(cfg.m)
            .map(|p| ProcessState::new(p, cfg.n, cfg.m, cfg.beta, cfg.mode))
            .collect::<Result<Vec<_>>>()?;
        let mut shm = SharedMemory::new(cfg.n, cfg.m)?;
        if matches!(cfg.mode, Mode::Flagged | Mode::WriteAll) {
            shm = shm.with_flag();
        }
        if cfg.mode == Mode::WriteAll {
            shm = shm.with_write_all(cfg.n);
        }
        Ok(Self::from_parts(shm, procs, JobMap::Identity, cfg.n, cfg.beta, cfg.mode, cfg.f, cfg.trace))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        shm: SharedMemory,
        procs: Vec<ProcessState>,
        jobs: JobMap,
        n: u32,
        beta: u32,
        mode: Mode,
        f: u32,
        record: TraceLevel,
    ) -> Self {
        Simulation {
            shm,
            performed: vec![0; n as usize],
            procs,
            jobs,
            n,
            beta,
            mode,
            level: 0,
            f,
            crashes_used: 0,
            moves_base: 0,
            moves: 0,
            record,
            events: Vec::new(),
        }
    }

    /// Continues global counters from an earlier phase.
    pub(crate) fn resume(mut self, level: u32, moves_base: u64, crashes_used: u32) -> Self {
        self.level = level;
        self.moves_base = moves_base;
        self.crashes_used = crashes_used;
        self
    }

    pub fn processes(&self) -> &[ProcessState] {
        &self.procs
    }

    pub fn process(&self, p: ProcessId) -> &ProcessState {
        &self.procs[p.index()]
    }

    pub fn memory(&self) -> &SharedMemory {
        &self.shm
    }

    pub(crate) fn memory_mut(&mut self) -> &mut SharedMemory {
        &mut self.shm
    }

    pub fn m(&self) -> u32 {
        self.procs.len() as u32
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn crashes_used(&self) -> u32 {
        self.crashes_used
    }

    /// Moves applied so far across all phases of the execution.
    pub fn moves(&self) -> u64 {
        self.moves_base + self.moves
    }

    /// Moves applied in this phase.
    pub fn phase_moves(&self) -> u64 {
        self.moves
    }

    pub fn performed(&self) -> &[u32] {
        &self.performed
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Processes that may still be scheduled.
    pub fn live(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.procs.iter().filter(|p| !p.status().is_terminal()).map(|p| p.pid())
    }

    /// No live process has an enabled action.
    pub fn is_quiescent(&self) -> bool {
        self.procs.iter().all(|p| p.status().is_terminal())
    }

    fn check_pid(&self, p: ProcessId) -> Result<usize> {
        if p.0 == 0 || p.0 as usize > self.procs.len() {
            return Err(SimError::Protocol(format!("no such process {}", p.0)));
        }
        Ok(p.index())
    }

    /// Applies one adversary move. `Halt` is a no-op here; the run loop
    /// interprets it.
    pub fn apply(&mut self, mv: Move) -> Result<()> {
        let step = self.moves();
        match mv {
            Move::Halt => return Ok(()),
            Move::Step(p) => {
                let i = self.check_pid(p)?;
                let status = self.procs[i].status();
                if status.is_terminal() {
                    return Err(SimError::Protocol(format!("scheduled {p} in terminal status {status:?}")));
                }
                let outcome = self.procs[i].step(&mut self.shm, &self.jobs)?;
                if self.record == TraceLevel::Full {
                    self.events.push(Event::Transition {
                        step,
                        pid: p,
                        action: outcome.action,
                        before: outcome.before,
                        after: outcome.after,
                        cost: outcome.cost,
                    });
                }
                for out in outcome.outputs {
                    self.record_output(step, p, out);
                }
            }
            Move::Crash(p) => {
                let i = self.check_pid(p)?;
                if self.crashes_used >= self.f {
                    return Err(SimError::Protocol(format!("crash of {p} exceeds the crash budget f = {}", self.f)));
                }
                if self.procs[i].status() == Status::Stop {
                    return Err(SimError::Protocol(format!("{p} crashed twice")));
                }
                let effective = self.procs[i].crash();
                self.crashes_used += 1;
                if self.record != TraceLevel::Off {
                    self.events.push(Event::Crash { step, pid: p, effective });
                }
            }
        }
        self.moves += 1;
        Ok(())
    }

    fn record_output(&mut self, step: u64, pid: ProcessId, out: Output) {
        if let Output::Do { job } = out {
            self.performed[job as usize - 1] += 1;
        }
        if self.record == TraceLevel::Off {
            return;
        }
        let ev = match out {
            Output::Do { job } => Event::Do { step, pid, job, base_jobs: self.jobs.base_jobs(job) },
            Output::DoneWrite { slot, job } => Event::DoneWrite { step, pid, slot, job },
            Output::Collision(w) => Event::CollisionWitness { step, pid, with: w.with, job: w.job, witness: w.kind },
            Output::FlagRaised => Event::FlagRaised { step, pid },
            Output::Terminated { leftover } => Event::Terminated { step, pid, leftover },
        };
        self.events.push(ev);
    }

    /// Post-barrier rescan by every process that has not crashed, told which
    /// processes crashed during this phase. Returns each survivor's leftover
    /// set.
    pub(crate) fn barrier_drains(&mut self, crashed: &[ProcessId]) -> Result<Vec<(ProcessId, Vec<JobId>)>> {
        let step = self.moves();
        let mut out = Vec::new();
        for proc in self.procs.iter_mut().filter(|p| p.status() == Status::End) {
            let (leftover, cost) = proc.barrier_drain(&mut self.shm, crashed)?;
            if self.record == TraceLevel::Full {
                self.events.push(Event::Transition {
                    step,
                    pid: proc.pid(),
                    action: crate::automaton::Action::Drain,
                    before: Status::End,
                    after: Status::End,
                    cost,
                });
            }
            out.push((proc.pid(), leftover));
        }
        Ok(out)
    }

    /// Runs `adv` until quiescence, a halt, or the step budget.
    pub fn run_with(&mut self, adv: &mut dyn Adversary, budget: u64) -> Result<RunEnd> {
        loop {
            if self.is_quiescent() {
                return Ok(RunEnd::Quiescent);
            }
            if self.moves >= budget {
                warn!("step budget {budget} exhausted with live processes; run truncated");
                return Ok(RunEnd::Truncated);
            }
            match adv.next_move(self) {
                Move::Halt => return Ok(RunEnd::Halted),
                mv => self.apply(mv)?,
            }
        }
    }

    pub fn online_work(&self) -> WorkReport {
        let access = self.shm.total_access();
        let (set_ops, rank_terms, transitions) = self
            .procs
            .iter()
            .fold((0, 0, 0), |acc, p| (acc.0 + p.set_ops(), acc.1 + p.rank_terms(), acc.2 + p.transitions()));
        WorkReport::from_counts(u64::from(self.n), transitions, access.reads, access.writes, set_ops, rank_terms)
    }

    pub fn into_trace(self, end: RunEnd) -> ExecutionTrace {
        let work = self.online_work();
        let done_rows = ProcessId::all(self.m())
            .map(|q| self.shm.done_row(q).iter().copied().take_while(|&v| v != 0).collect())
            .collect();
        ExecutionTrace {
            n: self.n,
            m: self.m(),
            beta: self.beta,
            f: self.f,
            mode: self.mode,
            level: self.level,
            record: self.record,
            events: self.events,
            moves: self.moves,
            crashes: self.crashes_used,
            final_status: self.procs.iter().map(|p| p.status()).collect(),
            work,
            done_rows,
            truncated: end == RunEnd::Truncated,
            halted: end == RunEnd::Halted,
        }
    }

    /// Canonical encoding of the global state for memoization.
    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        self.shm.encode_into(&mut out);
        for p in &self.procs {
            p.encode_into(&mut out);
        }
        out.push(self.crashes_used as u8);
        // at-most-once violations saturate at 2
        out.extend(self.performed.iter().map(|&c| c.min(2) as u8));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunEnd {
    Quiescent,
    Halted,
    Truncated,
}

/// Runs one execution of `cfg` under `adv`.
pub fn run(cfg: &Config, adv: &mut dyn Adversary) -> Result<ExecutionTrace> {
    let mut sim = Simulation::new(cfg)?;
    let end = sim.run_with(adv, cfg.step_budget())?;
    Ok(sim.into_trace(end))
}

/// Runs one execution of `cfg` under the adversary its scheduler names.
pub fn run_config(cfg: &Config) -> Result<ExecutionTrace> {
    let mut adv = adversary::from_config(cfg)?;
    run(cfg, adv.as_mut())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{RoundRobin, Scripted};

    #[test]
    fn solo_run_performs_all_jobs() {
        let cfg = Config::new(4, 1, 1, 0);
        let tr = run(&cfg, &mut RoundRobin::new()).unwrap();
        let jobs: Vec<_> = tr.do_events().map(|(_, j, _)| j).collect();
        assert_eq!(jobs, vec![1, 2, 3, 4]);
        assert!(tr.is_complete());
        assert_eq!(tr.final_status, vec![Status::End]);
    }

    #[test]
    fn two_process_round_robin_terminates() {
        let cfg = Config::new(10, 2, 2, 0);
        let tr = run(&cfg, &mut RoundRobin::new()).unwrap();
        assert!(tr.is_complete());
        assert!(tr.do_events().count() >= 8);
    }

    #[test]
    fn config_validation() {
        assert!(Config::new(2, 3, 3, 0).validate().is_err());
        assert!(Config::new(4, 2, 2, 2).validate().is_err());
        assert!(Config::new(4, 2, 0, 0).validate().is_err());
        assert!(Config::new(4, 0, 1, 0).validate().is_err());
        Config::new(4, 2, 1, 1).validate().unwrap();
    }

    #[test]
    fn double_crash_is_a_protocol_error() {
        let cfg = Config::new(6, 2, 2, 1);
        let mut adv = Scripted::new(vec![Move::Crash(ProcessId(1)), Move::Crash(ProcessId(1))]);
        assert!(matches!(run(&cfg, &mut adv), Err(SimError::Protocol(_))));

        let cfg = Config::new(6, 3, 3, 1);
        let mut adv = Scripted::new(vec![Move::Crash(ProcessId(1)), Move::Crash(ProcessId(2))]);
        assert!(matches!(run(&cfg, &mut adv), Err(SimError::Protocol(_))));
    }

    #[test]
    fn stepping_a_crashed_process_is_a_protocol_error() {
        let cfg = Config::new(6, 2, 2, 1);
        let mut adv = Scripted::new(vec![Move::Crash(ProcessId(2)), Move::Step(ProcessId(2))]);
        assert!(matches!(run(&cfg, &mut adv), Err(SimError::Protocol(_))));
    }

    #[test]
    fn crash_of_ended_process_is_recorded_noop() {
        let cfg = Config::new(2, 1, 1, 0);
        let mut sim = Simulation::new(&Config { f: 0, ..cfg }).unwrap();
        sim.run_with(&mut RoundRobin::new(), 100).unwrap();
        let mut cfg2 = Config::new(3, 2, 2, 1);
        cfg2.trace = TraceLevel::Events;
        let mut sim = Simulation::new(&cfg2).unwrap();
        while sim.process(ProcessId(1)).status() != Status::End {
            sim.apply(Move::Step(ProcessId(1))).unwrap();
        }
        sim.apply(Move::Crash(ProcessId(1))).unwrap();
        assert_eq!(sim.process(ProcessId(1)).status(), Status::End);
        assert_eq!(sim.crashes_used(), 1);
        assert!(matches!(sim.events().last(), Some(Event::Crash { effective: false, .. })));
    }

    #[test]
    fn truncation_is_flagged() {
        let mut cfg = Config::new(50, 2, 2, 0);
        cfg.max_steps = Some(10);
        let tr = run(&cfg, &mut RoundRobin::new()).unwrap();
        assert!(tr.truncated);
        assert!(!tr.is_complete());
    }

    #[test]
    fn metering_matches_transition_records() {
        let cfg = Config::new(30, 3, 3, 0);
        let tr = run(&cfg, &mut RoundRobin::new()).unwrap();
        let (reads, writes) = tr
            .transitions()
            .fold((0u64, 0u64), |acc, (_, _, c)| (acc.0 + u64::from(c.reads), acc.1 + u64::from(c.writes)));
        assert_eq!(reads, tr.work.shm_reads);
        assert_eq!(writes, tr.work.shm_writes);
        assert_eq!(tr.transitions().count() as u64, tr.work.transitions);
    }
}
