//! Scheduling strategies. Every adversary sees the whole simulation; the
//! processes it drives do not.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::automaton::Status;
use crate::engine::{Config, CrashAt, Move, Scheduler, Simulation, DEFAULT_STARVATION_FACTOR};
use crate::error::{Result, SimError};
use crate::types::ProcessId;

pub trait Adversary {
    fn next_move(&mut self, sim: &Simulation) -> Move;
}

impl<A: Adversary + ?Sized> Adversary for Box<A> {
    fn next_move(&mut self, sim: &Simulation) -> Move {
        (**self).next_move(sim)
    }
}

/// Pending scripted crashes, ordered by move index. Entries that are no
/// longer legal when their time comes (target already stopped, budget spent)
/// are dropped.
#[derive(Debug, Clone, Default)]
pub struct CrashPlan {
    pending: VecDeque<CrashAt>,
}

impl CrashPlan {
    pub fn new(mut crashes: Vec<CrashAt>) -> Self {
        crashes.sort_by_key(|c| c.at);
        CrashPlan { pending: crashes.into() }
    }

    /// `count` crashes of random processes at distinct random move indices
    /// in `0..horizon`.
    pub fn random(count: u32, horizon: u64, rng: &mut impl Rng) -> Self {
        let mut at: Vec<u64> = (0..count).map(|_| rng.random_range(0..horizon.max(1))).collect();
        at.sort_unstable();
        Self::new(at.into_iter().map(|at| CrashAt { at, pid: None }).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    fn due(&mut self, sim: &Simulation, mut pick: impl FnMut(&[ProcessId]) -> ProcessId) -> Option<Move> {
        while self.pending.front().is_some_and(|c| c.at <= sim.moves()) {
            let c = self.pending.pop_front()?;
            if sim.crashes_used() >= sim.f() {
                self.pending.clear();
                return None;
            }
            let target = match c.pid {
                Some(p) if p.0 >= 1 && p.0 <= sim.m() && sim.process(p).status() != Status::Stop => p,
                Some(_) => continue,
                None => {
                    let live: Vec<_> = sim.live().collect();
                    if live.is_empty() {
                        continue;
                    }
                    pick(&live)
                }
            };
            return Some(Move::Crash(target));
        }
        None
    }
}

/// Cycles over live processes in pid order.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    cursor: u32,
    crashes: CrashPlan,
}

impl RoundRobin {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_crashes(crashes: CrashPlan) -> Self {
        RoundRobin { cursor: 0, crashes }
    }
}

impl Adversary for RoundRobin {
    fn next_move(&mut self, sim: &Simulation) -> Move {
        if let Some(mv) = self.crashes.due(sim, |live| live[0]) {
            return mv;
        }
        let m = sim.m();
        for k in 0..m {
            let p = ProcessId((self.cursor + k) % m + 1);
            if !sim.process(p).status().is_terminal() {
                self.cursor = p.0 % m;
                return Move::Step(p);
            }
        }
        Move::Halt
    }
}

/// Uniformly random live process per move, seeded. A process left
/// unscheduled for `m * starvation_factor` moves goes next.
#[derive(Debug, Clone)]
pub struct RandomScheduler {
    rng: ChaCha8Rng,
    cap: u64,
    /// Move index at which each process was last scheduled (or became live).
    last: Vec<u64>,
    crashes: CrashPlan,
}

impl RandomScheduler {
    pub fn new(seed: u64, m: u32, starvation_factor: u32, crashes: CrashPlan) -> Self {
        RandomScheduler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            cap: u64::from(m) * u64::from(starvation_factor.max(1)),
            last: vec![0; m as usize],
            crashes,
        }
    }

    /// Draws `f` crashes of random processes before move `horizon`, using
    /// the same seed stream as the scheduler.
    pub fn with_random_crashes(seed: u64, m: u32, starvation_factor: u32, f: u32, horizon: u64) -> Self {
        let mut s = Self::new(seed, m, starvation_factor, CrashPlan::default());
        s.crashes = CrashPlan::random(f, horizon, &mut s.rng);
        s
    }

    pub fn starvation_cap(&self) -> u64 {
        self.cap
    }
}

impl Adversary for RandomScheduler {
    fn next_move(&mut self, sim: &Simulation) -> Move {
        let rng = &mut self.rng;
        if let Some(mv) = self.crashes.due(sim, |live| live[rng.random_range(0..live.len())]) {
            return mv;
        }
        let now = sim.moves();
        let live: Vec<ProcessId> = sim.live().collect();
        if live.is_empty() {
            return Move::Halt;
        }
        // A new phase restarts processes; never count time before it.
        let phase_start = now - sim.phase_moves();
        let waited = |p: ProcessId| now - self.last[p.index()].max(phase_start);
        let starved = live.iter().copied().filter(|&p| waited(p) >= self.cap).max_by_key(|&p| waited(p));
        let p = starved.unwrap_or_else(|| live[self.rng.random_range(0..live.len())]);
        self.last[p.index()] = now + 1;
        Move::Step(p)
    }
}

/// Announces a job from each of processes `1..m-1`, crashes each right after
/// its announcement, then runs process `m` alone. Needs `f = m - 1`.
#[derive(Debug, Clone)]
pub struct WorstCase {
    target: u32,
    m: u32,
}

impl WorstCase {
    pub fn new(cfg: &Config) -> Result<Self> {
        if cfg.m < 2 {
            return Err(SimError::Config("the worst-case adversary needs m >= 2".into()));
        }
        if cfg.f != cfg.m - 1 {
            return Err(SimError::Config(format!("the worst-case adversary needs f = m - 1 = {}", cfg.m - 1)));
        }
        if cfg.beta < cfg.m {
            return Err(SimError::Config("the worst-case adversary needs beta >= m".into()));
        }
        Ok(WorstCase { target: 1, m: cfg.m })
    }
}

impl Adversary for WorstCase {
    fn next_move(&mut self, sim: &Simulation) -> Move {
        while self.target < self.m {
            let p = ProcessId(self.target);
            match sim.process(p).status() {
                Status::End | Status::Stop => self.target += 1,
                // setNext has just completed: the job is visible in next[p].
                Status::GatherTry => {
                    self.target += 1;
                    return Move::Crash(p);
                }
                _ => return Move::Step(p),
            }
        }
        let last = ProcessId(self.m);
        if sim.process(last).status().is_terminal() {
            Move::Halt
        } else {
            Move::Step(last)
        }
    }
}

/// Replays a fixed move sequence, then halts.
#[derive(Debug, Clone)]
pub struct Scripted {
    moves: std::vec::IntoIter<Move>,
}

impl Scripted {
    pub fn new(moves: Vec<Move>) -> Self {
        Scripted { moves: moves.into_iter() }
    }
}

impl Adversary for Scripted {
    fn next_move(&mut self, _sim: &Simulation) -> Move {
        self.moves.next().unwrap_or(Move::Halt)
    }
}

/// The adversary named by `cfg.scheduler`, with `cfg.crash_at` applied.
pub fn from_config(cfg: &Config) -> Result<Box<dyn Adversary + Send>> {
    Ok(match &cfg.scheduler {
        Scheduler::RoundRobin => Box::new(RoundRobin::with_crashes(CrashPlan::new(cfg.crash_at.clone()))),
        Scheduler::Random { starvation_factor, random_crash_horizon } => {
            let factor = if *starvation_factor == 0 { DEFAULT_STARVATION_FACTOR } else { *starvation_factor };
            match random_crash_horizon {
                Some(h) if cfg.crash_at.is_empty() => {
                    Box::new(RandomScheduler::with_random_crashes(cfg.seed, cfg.m, factor, cfg.f, *h))
                }
                _ => Box::new(RandomScheduler::new(cfg.seed, cfg.m, factor, CrashPlan::new(cfg.crash_at.clone()))),
            }
        }
        Scheduler::WorstCase => Box::new(WorstCase::new(cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::trace::Event;

    fn step_pids(events: &[Event]) -> Vec<u32> {
        events
            .iter()
            .filter_map(|e| match e {
                Event::Transition { pid, .. } => Some(pid.0),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn round_robin_alternates_and_skips_ended() {
        let cfg = Config::new(6, 2, 2, 0);
        let tr = run(&cfg, &mut RoundRobin::new()).unwrap();
        let pids = step_pids(&tr.events);
        assert_eq!(pids[..6], [1, 2, 1, 2, 1, 2]);
        assert!(!tr.events.iter().any(|e| matches!(e, Event::Crash { .. })));
        // once a process ends the other runs alone
        let ended = tr
            .events
            .iter()
            .find_map(|e| match e {
                Event::Terminated { step, pid, .. } => Some((*step, pid.0)),
                _ => None,
            })
            .unwrap();
        let later: Vec<_> = tr
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Transition { pid, .. } if e.step() > ended.0 => Some(pid.0),
                _ => None,
            })
            .collect();
        assert!(later.iter().all(|&p| p != ended.1));
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let cfg = Config::new(40, 3, 3, 0).with_seed(9);
        let mut a = RandomScheduler::new(9, 3, 64, CrashPlan::default());
        let mut b = RandomScheduler::new(9, 3, 64, CrashPlan::default());
        let ta = run(&cfg, &mut a).unwrap();
        let tb = run(&cfg, &mut b).unwrap();
        assert_eq!(ta.events, tb.events);
        assert_eq!(ta.crashes, 0);
        let mut c = RandomScheduler::new(10, 3, 64, CrashPlan::default());
        assert_ne!(run(&cfg, &mut c).unwrap().events, ta.events);
    }

    #[test]
    fn starvation_cap_bounds_scheduling_gaps() {
        // factor 1 makes the cap tiny enough to be exercised constantly.
        // Processes starving at the same time are served one per move, so
        // the last of them may wait up to m - 1 moves beyond the cap.
        for seed in 0..20 {
            let cfg = Config::new(60, 4, 4, 0);
            let mut adv = RandomScheduler::new(seed, 4, 1, CrashPlan::default());
            let cap = adv.starvation_cap();
            let tr = run(&cfg, &mut adv).unwrap();
            let mut last = [0u64; 4];
            let mut alive = [true; 4];
            for e in &tr.events {
                if let Event::Transition { step, pid, after, .. } = e {
                    for q in 0..4 {
                        if alive[q] && q != pid.index() {
                            assert!(step - last[q] <= cap + 4, "seed {seed}: p{} starved", q + 1);
                        }
                    }
                    last[pid.index()] = *step;
                    if after.is_terminal() {
                        alive[pid.index()] = false;
                    }
                }
            }
        }
    }

    #[test]
    fn scripted_crashes_fire_at_their_move() {
        let cfg = Config::new(20, 3, 3, 2);
        let plan = CrashPlan::new(vec![
            CrashAt { at: 5, pid: Some(ProcessId(2)) },
            CrashAt { at: 5, pid: Some(ProcessId(2)) },
            CrashAt { at: 9, pid: Some(ProcessId(3)) },
        ]);
        let tr = run(&cfg, &mut RoundRobin::with_crashes(plan)).unwrap();
        let crashes: Vec<_> = tr
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Crash { step, pid, .. } => Some((*step, pid.0)),
                _ => None,
            })
            .collect();
        // the duplicate is dropped, not sent to the engine
        assert_eq!(crashes, vec![(5, 2), (9, 3)]);
        assert!(tr.is_complete());
    }

    #[test]
    fn random_crashes_respect_budget() {
        for seed in 0..30 {
            let cfg = Config::new(30, 3, 3, 2);
            let mut adv = RandomScheduler::with_random_crashes(seed, 3, 64, 2, 200);
            let tr = run(&cfg, &mut adv).unwrap();
            assert!(tr.crashes <= 2);
            assert!(tr.is_complete());
        }
    }

    #[test]
    fn worst_case_preconditions() {
        assert!(WorstCase::new(&Config::new(10, 1, 1, 0)).is_err());
        assert!(WorstCase::new(&Config::new(10, 3, 3, 1)).is_err());
        assert!(WorstCase::new(&Config::new(10, 3, 2, 2)).is_err());
        WorstCase::new(&Config::new(10, 3, 3, 2)).unwrap();
    }

    #[test]
    fn worst_case_crashes_after_announcement() {
        let cfg = Config::new(20, 2, 2, 1);
        let tr = run(&cfg, &mut WorstCase::new(&cfg).unwrap()).unwrap();
        assert_eq!(step_pids(&tr.events)[..2], [1, 1]);
        assert!(matches!(tr.events[2], Event::Crash { pid: ProcessId(1), effective: true, .. }));
        assert_eq!(tr.do_events().count(), 18);
    }
}
