//! The iterated algorithm: jobs are grouped into super-jobs of shrinking
//! size, and each level runs the flagged automaton over them in a fresh
//! memory region. The Write-All variant hands FREE on instead of
//! `FREE \ TRY` and finishes with every survivor sweeping what is left.

use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::adversary::Adversary;
use crate::automaton::{Mode, ProcessState, Status};
use crate::engine::{RunEnd, Simulation};
use crate::error::{Result, SimError};
use crate::ledger;
use crate::registers::SharedMemory;
use crate::trace::{ExecutionTrace, TraceLevel, WorkReport};
use crate::types::{log_factor, JobId, JobMap, ProcessId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperJob {
    pub id: JobId,
    pub level: u32,
    /// Sorted, nonempty.
    pub base_jobs: Vec<JobId>,
}

/// `T` itself: base jobs `1..=n` as size-one super-jobs.
pub fn base_jobs(n: u32) -> Vec<SuperJob> {
    (1..=n).map(|j| SuperJob { id: j, level: 0, base_jobs: vec![j] }).collect()
}

/// Regroups super-jobs of size `s1` into super-jobs of size `s2`.
///
/// Growing sizes merge `ceil(s2 / s1)` consecutive super-jobs (by id);
/// shrinking sizes split each super-job into consecutive chunks of `s2` base
/// jobs. New ids are `1, 2, ...` in order. The union of base jobs is kept.
pub fn mapf(jobs: &[SuperJob], s1: u64, s2: u64, level: u32) -> Vec<SuperJob> {
    let mut sorted: Vec<&SuperJob> = jobs.iter().collect();
    sorted.sort_by_key(|s| s.id);
    let groups: Vec<Vec<JobId>> = if s2 >= s1 {
        let g = s2.div_ceil(s1.max(1)).max(1) as usize;
        sorted
            .chunks(g)
            .map(|c| {
                let mut base: Vec<JobId> = c.iter().flat_map(|s| s.base_jobs.iter().copied()).collect();
                base.sort_unstable();
                base
            })
            .collect()
    } else {
        sorted.iter().flat_map(|s| s.base_jobs.chunks(s2.max(1) as usize).map(<[JobId]>::to_vec)).collect()
    };
    groups.into_iter().zip(1..).map(|(base_jobs, id)| SuperJob { id, level, base_jobs }).collect()
}

/// Validates `epsilon` and returns `1 / epsilon`, which must be a positive
/// integer.
pub fn inverse_epsilon(epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(SimError::Config(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let inv = 1.0 / epsilon;
    let k = inv.round();
    if (inv - k).abs() > 1e-9 {
        return Err(SimError::Config(format!("1/epsilon = {inv} is not an integer")));
    }
    Ok(k as u32)
}

/// Super-job sizes of every level: `[1, s0, s1, ..., sk, 1]` with
/// `k = 1 / epsilon`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub inverse_epsilon: u32,
    pub sizes: Vec<u64>,
}

impl LevelSchedule {
    pub fn new(n: u32, m: u32, inverse_epsilon: u32) -> Result<Self> {
        if inverse_epsilon == 0 {
            return Err(SimError::Config("1/epsilon must be a positive integer".into()));
        }
        let ln = log_factor(u64::from(n));
        let lm = log_factor(u64::from(m));
        let k = inverse_epsilon;
        let mut sizes = vec![1, u64::from(m) * ln * lm];
        for i in 1..=k {
            let exp = f64::from(k - i) / f64::from(k);
            let raw = f64::from(m).powf(exp) * (ln as f64) * (lm as f64).powi(1 + i as i32);
            let s = (raw.ceil() as u64).max(1);
            let prev = *sizes.last().expect("schedule starts nonempty");
            sizes.push(s.min(prev));
        }
        sizes.push(1);
        Ok(LevelSchedule { inverse_epsilon, sizes })
    }

    /// Number of invocations of the flagged automaton.
    pub fn invocations(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Jobs that may go unperformed:
    /// `(2 + k)(m - 1) m L(n) L(m) + 3m^2 + m - 2`.
    pub fn loss_budget(&self, n: u32, m: u32) -> u64 {
        let m64 = u64::from(m);
        let per_level = (m64 - 1) * m64 * log_factor(u64::from(n)) * log_factor(m64);
        (2 + u64::from(self.inverse_epsilon)) * per_level + 3 * m64 * m64 + m64 - 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub n: u32,
    pub m: u32,
    pub f: u32,
    pub inverse_epsilon: u32,
    /// Step cap per phase; defaults to `64 * max(jobs, m) * m^2`.
    pub max_steps: Option<u64>,
    pub trace: TraceLevel,
}

impl HierarchyConfig {
    pub fn new(n: u32, m: u32, f: u32, inverse_epsilon: u32) -> Self {
        HierarchyConfig { n, m, f, inverse_epsilon, max_steps: None, trace: TraceLevel::Events }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n < self.m {
            return Err(SimError::Config(format!("need n >= m >= 1, got n = {}, m = {}", self.n, self.m)));
        }
        if self.f >= self.m {
            return Err(SimError::Config(format!("crash budget f = {} must be below m = {}", self.f, self.m)));
        }
        if self.trace == TraceLevel::Off {
            return Err(SimError::Config("the hierarchy checks need at least event traces".into()));
        }
        LevelSchedule::new(self.n, self.m, self.inverse_epsilon).map(|_| ())
    }

    /// The per-level termination threshold `3 m^2`.
    pub fn beta(&self) -> u32 {
        3 * self.m * self.m
    }

    fn budget(&self, jobs: u32) -> u64 {
        let m = u64::from(self.m);
        self.max_steps.unwrap_or(64 * u64::from(jobs.max(self.m)) * m * m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: u32,
    pub size: u64,
    pub super_jobs: u32,
    /// Super-jobs performed at this level.
    pub performed: u64,
    pub base_done: u64,
    pub leftover: u32,
    pub crashed: Vec<ProcessId>,
    pub moves: u64,
    pub work: WorkReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchySummary {
    pub n: u32,
    pub m: u32,
    pub f: u32,
    pub mode: Mode,
    pub schedule: LevelSchedule,
    pub levels: Vec<LevelSummary>,
    /// One trace per phase, the Write-All sweep last.
    pub traces: Vec<ExecutionTrace>,
    /// Distinct base jobs performed.
    pub done: u64,
    pub amo_ok: bool,
    pub loss_budget: u64,
    pub bound_ok: bool,
    pub work: WorkReport,
    pub moves: u64,
    pub crashes: u32,
    /// Base jobs still unperformed after the last level.
    pub final_leftover: Vec<JobId>,
    /// Cells of the Write-All array set to one.
    pub wa_coverage: Option<u64>,
    pub truncated: bool,
}

struct Driver<'a> {
    cfg: &'a HierarchyConfig,
    mode: Mode,
    adv: &'a mut dyn Adversary,
    alive: Vec<bool>,
    moves: u64,
    crashes: u32,
    wa: Option<Vec<u8>>,
    traces: Vec<ExecutionTrace>,
    levels: Vec<LevelSummary>,
}

impl Driver<'_> {
    fn processes(&self, make: impl Fn(ProcessId) -> Result<ProcessState>, n: u32) -> Result<Vec<ProcessState>> {
        ProcessId::all(self.cfg.m)
            .map(|p| if self.alive[p.index()] { make(p) } else { ProcessState::crashed(p, n, self.cfg.m, self.mode) })
            .collect()
    }

    /// One invocation of the flagged automaton followed by the barrier.
    /// Returns the agreed leftover, or `None` if the phase did not finish.
    fn level(&mut self, level: u32, size: u64, jobs: &[SuperJob]) -> Result<Option<Vec<SuperJob>>> {
        let (m, beta) = (self.cfg.m, self.cfg.beta());
        let n = jobs.len() as u32;
        let table: Arc<[Vec<JobId>]> = jobs.iter().map(|s| s.base_jobs.clone()).collect();
        let mode = self.mode;
        let procs = self.processes(|p| ProcessState::new(p, n, m, beta, mode), n)?;
        let mut shm = SharedMemory::new(n, m)?.with_flag();
        if let Some(wa) = self.wa.take() {
            shm = shm.with_write_all_array(wa);
        }
        let mut sim =
            Simulation::from_parts(shm, procs, JobMap::Table(table), n, beta, mode, self.cfg.f, self.cfg.trace).resume(
                level,
                self.moves,
                self.crashes,
            );
        let end = sim.run_with(self.adv, self.cfg.budget(n))?;
        let crashed: Vec<ProcessId> =
            ProcessId::all(m).filter(|p| self.alive[p.index()] && sim.process(*p).status() == Status::Stop).collect();
        let mut leftover = None;
        if end == RunEnd::Quiescent {
            let drains = sim.barrier_drains(&crashed)?;
            let (first, view) = drains.first().ok_or_else(|| SimError::Invariant("no survivor at a barrier".into()))?;
            if let Some((p, other)) = drains.iter().find(|(_, v)| v != view) {
                return Err(SimError::Invariant(format!(
                    "leftover views diverge after barrier: {first} has {} jobs, {p} has {}",
                    view.len(),
                    other.len()
                )));
            }
            leftover = Some(view.clone());
        }
        for p in &crashed {
            self.alive[p.index()] = false;
        }
        self.moves = sim.moves();
        self.crashes = sim.crashes_used();
        self.wa = sim.memory_mut().take_write_all();
        let trace = sim.into_trace(end);
        let performed = trace.do_events().count() as u64;
        let base_done = trace.do_events().map(|(_, _, b)| b.len() as u64).sum();
        debug!("level {level}: {n} super-jobs of size {size}, {performed} performed, {crashed:?} crashed");
        let leftover = leftover.map(|ids: Vec<JobId>| {
            ids.iter().map(|&id| SuperJob { level, ..jobs[id as usize - 1].clone() }).collect::<Vec<_>>()
        });
        self.levels.push(LevelSummary {
            level,
            size,
            super_jobs: n,
            performed,
            base_done,
            leftover: leftover.as_ref().map_or(0, |l| l.len() as u32),
            crashed,
            moves: trace.moves,
            work: trace.work,
        });
        self.traces.push(trace);
        Ok(leftover)
    }

    /// Every survivor performs every job in `jobs` and writes it into the
    /// Write-All array.
    fn sweep(&mut self, jobs: &[JobId]) -> Result<bool> {
        let (n, m) = (self.cfg.n, self.cfg.m);
        let procs = self.processes(|p| ProcessState::sweep(p, n, m, jobs.to_vec()), 0)?;
        let wa = self.wa.take().ok_or_else(|| SimError::Invariant("Write-All array missing".into()))?;
        let shm = SharedMemory::new(0, m)?.with_write_all_array(wa);
        let mut sim =
            Simulation::from_parts(shm, procs, JobMap::Identity, n, 0, Mode::Sweep, self.cfg.f, self.cfg.trace).resume(
                self.traces.len() as u32,
                self.moves,
                self.crashes,
            );
        let budget = 64 * (jobs.len() as u64 + 1) * u64::from(m);
        let end = sim.run_with(self.adv, budget)?;
        self.moves = sim.moves();
        self.crashes = sim.crashes_used();
        self.wa = sim.memory_mut().take_write_all();
        self.traces.push(sim.into_trace(end));
        Ok(end == RunEnd::Quiescent)
    }
}

fn drive(cfg: &HierarchyConfig, mode: Mode, adv: &mut dyn Adversary) -> Result<HierarchySummary> {
    cfg.validate()?;
    let schedule = LevelSchedule::new(cfg.n, cfg.m, cfg.inverse_epsilon)?;
    let mut d = Driver {
        cfg,
        mode,
        adv,
        alive: vec![true; cfg.m as usize],
        moves: 0,
        crashes: 0,
        wa: (mode == Mode::WriteAll).then(|| vec![0; cfg.n as usize]),
        traces: Vec::new(),
        levels: Vec::new(),
    };
    let mut current = base_jobs(cfg.n);
    let mut truncated = false;
    for (level, w) in schedule.sizes.windows(2).enumerate() {
        let mapped = mapf(&current, w[0], w[1], level as u32);
        if mapped.is_empty() {
            current = mapped;
            continue;
        }
        match d.level(level as u32, w[1], &mapped)? {
            Some(left) => current = left,
            None => {
                truncated = true;
                break;
            }
        }
    }
    let mut final_leftover: Vec<JobId> = current.iter().flat_map(|s| s.base_jobs.iter().copied()).collect();
    final_leftover.sort_unstable();
    if mode == Mode::WriteAll && !truncated {
        truncated = !d.sweep(&final_leftover)?;
    }
    let done = ledger::effectiveness_levels(&d.traces);
    let amo_ok = ledger::check_at_most_once_levels(&d.traces).is_ok();
    let loss_budget = schedule.loss_budget(cfg.n, cfg.m);
    let mut work = WorkReport::default();
    for t in &d.traces {
        work.accumulate(&t.work);
    }
    let wa_coverage = d.wa.as_ref().map(|wa| wa.iter().map(|&c| u64::from(c)).sum());
    Ok(HierarchySummary {
        n: cfg.n,
        m: cfg.m,
        f: cfg.f,
        mode,
        loss_budget,
        bound_ok: !truncated && done + loss_budget >= u64::from(cfg.n),
        schedule,
        levels: d.levels,
        traces: d.traces,
        done,
        amo_ok,
        work,
        moves: d.moves,
        crashes: d.crashes,
        final_leftover,
        wa_coverage,
        truncated,
    })
}

/// Runs the iterated at-most-once algorithm under `adv`.
pub fn run_iterative(cfg: &HierarchyConfig, adv: &mut dyn Adversary) -> Result<HierarchySummary> {
    drive(cfg, Mode::Flagged, adv)
}

/// Runs the Write-All variant under `adv`.
pub fn run_writeall(cfg: &HierarchyConfig, adv: &mut dyn Adversary) -> Result<HierarchySummary> {
    drive(cfg, Mode::WriteAll, adv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{CrashPlan, RandomScheduler, RoundRobin};
    use crate::engine::CrashAt;

    fn sj(id: JobId, base: &[JobId]) -> SuperJob {
        SuperJob { id, level: 0, base_jobs: base.to_vec() }
    }

    fn union(jobs: &[SuperJob]) -> Vec<JobId> {
        let mut u: Vec<_> = jobs.iter().flat_map(|s| s.base_jobs.iter().copied()).collect();
        u.sort_unstable();
        u
    }

    #[test]
    fn mapf_groups_consecutive_jobs() {
        let out = mapf(&base_jobs(12), 1, 4, 1);
        let bases: Vec<_> = out.iter().map(|s| s.base_jobs.clone()).collect();
        assert_eq!(bases, vec![(1..=4).collect::<Vec<_>>(), (5..=8).collect(), (9..=12).collect()]);
        assert_eq!(out.iter().map(|s| s.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn mapf_splits_when_shrinking() {
        let input = vec![sj(1, &[1, 2, 3, 4, 5, 6]), sj(2, &[7, 8, 9, 10, 11, 12])];
        let out = mapf(&input, 6, 2, 1);
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|s| s.base_jobs.len() == 2));
        assert_eq!(union(&out), (1..=12).collect::<Vec<_>>());
    }

    #[test]
    fn mapf_groups_survivors_by_id() {
        let input = vec![sj(8, &[15, 16]), sj(3, &[5, 6]), sj(7, &[13, 14])];
        let out = mapf(&input, 2, 4, 1);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].base_jobs, vec![5, 6, 13, 14]);
        assert_eq!(out[1].base_jobs, vec![15, 16]);
        assert!(mapf(&[], 2, 4, 1).is_empty());
    }

    #[test]
    fn epsilon_validation() {
        assert_eq!(inverse_epsilon(1.0).unwrap(), 1);
        assert_eq!(inverse_epsilon(0.5).unwrap(), 2);
        assert_eq!(inverse_epsilon(0.25).unwrap(), 4);
        assert!(inverse_epsilon(0.3).is_err());
        assert!(inverse_epsilon(0.0).is_err());
        assert!(inverse_epsilon(1.5).is_err());
    }

    #[test]
    fn schedule_sizes() {
        let s = LevelSchedule::new(1 << 14, 2, 1).unwrap();
        assert_eq!(s.sizes, vec![1, 60, 60, 1]);
        assert_eq!(s.loss_budget(1 << 14, 2), 192);
        let s = LevelSchedule::new(1 << 14, 4, 1).unwrap();
        assert_eq!(s.sizes, vec![1, 180, 135, 1]);
        assert_eq!(s.loss_budget(1 << 14, 4), 1670);
        let s = LevelSchedule::new(1 << 12, 8, 2).unwrap();
        assert_eq!(s.sizes.len(), 3 + 2);
        assert!(s.sizes[1..].windows(2).all(|w| w[0] >= w[1]));
        assert!(LevelSchedule::new(100, 2, 0).is_err());
    }

    #[test]
    fn single_process_collapses_to_solo_runs() {
        let cfg = HierarchyConfig::new(200, 1, 0, 1);
        let s = run_iterative(&cfg, &mut RoundRobin::new()).unwrap();
        assert!(s.amo_ok && !s.truncated);
        assert!(s.done >= 200 - 2);
        assert!(s.bound_ok);
    }

    #[test]
    fn iterative_random_runs_hold_bounds() {
        for seed in 0..6 {
            let cfg = HierarchyConfig::new(3000, 3, 2, 1);
            let mut adv = RandomScheduler::with_random_crashes(seed, 3, 64, 2, 20_000);
            let s = run_iterative(&cfg, &mut adv).unwrap();
            assert!(!s.truncated);
            assert!(s.amo_ok, "seed {seed}");
            assert!(s.bound_ok, "seed {seed}: done {} budget {}", s.done, s.loss_budget);
            assert_eq!(s.levels.len(), s.schedule.invocations());
        }
    }

    #[test]
    fn small_level_raises_flag_at_once() {
        // 5 jobs < 3m^2 = 12: the first compNext ends the level.
        let cfg = HierarchyConfig::new(5, 2, 0, 1);
        let s = run_iterative(&cfg, &mut RoundRobin::new()).unwrap();
        assert_eq!(s.done, 0);
        assert_eq!(s.final_leftover, vec![1, 2, 3, 4, 5]);
        assert!(s.bound_ok);
    }

    #[test]
    fn write_all_covers_every_cell() {
        for seed in 0..5 {
            let cfg = HierarchyConfig::new(500, 3, 2, 1);
            let mut adv = RandomScheduler::with_random_crashes(seed, 3, 64, 2, 5_000);
            let s = run_writeall(&cfg, &mut adv).unwrap();
            assert!(!s.truncated);
            assert_eq!(s.wa_coverage, Some(500), "seed {seed}");
        }
    }

    #[test]
    fn write_all_with_early_crashes() {
        let cfg = HierarchyConfig::new(300, 3, 2, 1);
        let plan = CrashPlan::new(vec![
            CrashAt { at: 3, pid: Some(ProcessId(1)) },
            CrashAt { at: 40, pid: Some(ProcessId(3)) },
        ]);
        let s = run_writeall(&cfg, &mut RoundRobin::with_crashes(plan)).unwrap();
        assert_eq!(s.crashes, 2);
        assert_eq!(s.wa_coverage, Some(300));
    }
}
