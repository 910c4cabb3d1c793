//! Exhaustive search over every interleaving and crash placement of a tiny
//! instance, with memoization on canonical global states.

use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::adversary::Scripted;
use crate::automaton::{Action, Mode};
use crate::engine::{Config, Move, Simulation};
use crate::error::Result;
use crate::ledger::effectiveness_bound;
use crate::trace::{ExecutionTrace, TraceLevel};
use crate::types::{JobId, ProcessId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub n: u32,
    pub m: u32,
    pub beta: u32,
    pub f: u32,
    /// Longest path explored before reporting possible non-termination.
    pub depth_limit: u64,
    /// Branch on crashes only right before a shared write or a check.
    /// Crashing between two reads is indistinguishable to the others.
    pub prune_crashes: bool,
    pub mode: Mode,
}

impl ExploreConfig {
    pub fn new(n: u32, m: u32, beta: u32, f: u32) -> Self {
        ExploreConfig { n, m, beta, f, depth_limit: 10_000, prune_crashes: true, mode: Mode::Plain }
    }

    pub fn engine_config(&self) -> Config {
        let mut cfg = Config::new(self.n, self.m, self.beta, self.f).with_mode(self.mode);
        cfg.max_steps = Some(self.depth_limit.saturating_add(1));
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub job: JobId,
    pub path: Vec<Move>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonTerminationKind {
    /// A state repeats along one path, so some fair schedule runs forever.
    Cycle,
    DepthLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonTermination {
    pub kind: NonTerminationKind,
    pub path: Vec<Move>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub config: ExploreConfig,
    pub states_visited: u64,
    /// Distinct terminal states: every process ended or crashed.
    pub terminal_states: u64,
    pub max_depth: u64,
    pub violation: Option<Counterexample>,
    pub min_effectiveness: Option<u64>,
    pub min_effectiveness_path: Vec<Move>,
    pub effectiveness_bound: u64,
    pub non_termination: Option<NonTermination>,
}

impl ExplorationReport {
    pub fn amo_ok(&self) -> bool {
        self.violation.is_none()
    }

    /// Minimum terminal effectiveness meets `n - (beta + m - 2)`. Only
    /// claimed for `beta >= m`.
    pub fn bound_ok(&self) -> bool {
        self.config.beta < self.config.m || self.min_effectiveness.is_none_or(|e| e >= self.effectiveness_bound)
    }

    /// Every check that applies to this configuration passed. Below
    /// `beta = m` non-termination is reported but not a failure.
    pub fn passed(&self) -> bool {
        let terminates = self.config.beta < self.config.m || self.non_termination.is_none();
        self.amo_ok() && self.bound_ok() && terminates
    }
}

/// 128-bit fingerprint of a canonical state encoding. Keeps the memo table
/// at 16 bytes per state; two seeded hashes make a false merge vanishingly
/// unlikely at the state counts reachable here.
fn fingerprint(key: &[u8]) -> u128 {
    let half = |salt: u64| {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        key.hash(&mut h);
        h.finish()
    };
    (u128::from(half(0x9e37_79b9_7f4a_7c15)) << 64) | u128::from(half(0xd1b5_4a32_d192_ed03))
}

struct Frame {
    sim: Simulation,
    key: u128,
    moves: Vec<Move>,
    next: usize,
}

fn choices(sim: &Simulation, cfg: &ExploreConfig) -> Vec<Move> {
    let mut out: Vec<Move> = sim.live().map(Move::Step).collect();
    if sim.crashes_used() < sim.f() {
        let crashable = |p: &ProcessId| {
            !cfg.prune_crashes
                || matches!(sim.process(*p).enabled_action(), Ok(Action::SetNext | Action::Done | Action::Check))
        };
        out.extend(sim.live().filter(crashable).map(Move::Crash));
    }
    out
}

fn performed_count(sim: &Simulation) -> u64 {
    sim.performed().iter().filter(|&&c| c > 0).count() as u64
}

/// Depth-first search over all schedules of `cfg`. Stops at the first
/// at-most-once violation; otherwise covers every reachable state.
pub fn explore(cfg: &ExploreConfig) -> Result<ExplorationReport> {
    let root = Simulation::new(&cfg.engine_config().with_trace(TraceLevel::Off))?;
    let mut report = ExplorationReport {
        config: cfg.clone(),
        states_visited: 1,
        terminal_states: 0,
        max_depth: 0,
        violation: None,
        min_effectiveness: None,
        min_effectiveness_path: Vec::new(),
        effectiveness_bound: effectiveness_bound(cfg.n, cfg.m, cfg.beta),
        non_termination: None,
    };
    let root_key = fingerprint(&root.encode());
    let mut visited: HashSet<u128> = HashSet::from([root_key]);
    let mut on_stack: HashSet<u128> = HashSet::from([root_key]);
    let mut path: Vec<Move> = Vec::new();
    let mut stack = vec![Frame { moves: choices(&root, cfg), sim: root, key: root_key, next: 0 }];

    while let Some(top) = stack.last_mut() {
        if top.next == top.moves.len() {
            on_stack.remove(&top.key);
            stack.pop();
            path.pop();
            continue;
        }
        let mv = top.moves[top.next];
        top.next += 1;
        let mut child = top.sim.clone();
        child.apply(mv)?;
        path.push(mv);
        if let Some(j) = child.performed().iter().position(|&c| c > 1) {
            report.violation = Some(Counterexample { job: j as JobId + 1, path: path.clone() });
            break;
        }
        let key = fingerprint(&child.encode());
        if on_stack.contains(&key) {
            report
                .non_termination
                .get_or_insert_with(|| NonTermination { kind: NonTerminationKind::Cycle, path: path.clone() });
            path.pop();
            continue;
        }
        if !visited.insert(key) {
            path.pop();
            continue;
        }
        let depth = path.len() as u64;
        report.max_depth = report.max_depth.max(depth);
        if child.is_quiescent() {
            report.terminal_states += 1;
            let eff = performed_count(&child);
            if report.min_effectiveness.is_none_or(|m| eff < m) {
                report.min_effectiveness = Some(eff);
                report.min_effectiveness_path = path.clone();
            }
            path.pop();
            continue;
        }
        if depth >= cfg.depth_limit {
            report
                .non_termination
                .get_or_insert_with(|| NonTermination { kind: NonTerminationKind::DepthLimit, path: path.clone() });
            path.pop();
            continue;
        }
        on_stack.insert(key);
        stack.push(Frame { moves: choices(&child, cfg), sim: child, key, next: 0 });
    }
    report.states_visited = visited.len() as u64;
    Ok(report)
}

/// Replays a move sequence found by [`explore`] through the engine, with a
/// full trace.
pub fn counterexample_replay(cfg: &ExploreConfig, path: &[Move]) -> Result<ExecutionTrace> {
    let ecfg = cfg.engine_config().with_trace(TraceLevel::Full);
    let mut sim = Simulation::new(&ecfg)?;
    let end = sim.run_with(&mut Scripted::new(path.to_vec()), u64::MAX)?;
    Ok(sim.into_trace(end))
}
