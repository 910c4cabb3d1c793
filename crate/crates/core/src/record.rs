//! One flat result record per run, the unit of JSON-lines output.

use serde::{Deserialize, Serialize};

use crate::automaton::Mode;
use crate::engine::{run_config, Config, Scheduler};
use crate::error::Result;
use crate::ledger::{self, EffectivenessError};
use crate::trace::{ExecutionTrace, TraceLevel};
use crate::types::log_factor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub n: u32,
    pub m: u32,
    pub beta: u32,
    pub f: u32,
    pub mode: Mode,
    pub scheduler: String,
    pub starvation_factor: Option<u32>,
    pub crash_horizon: Option<u64>,
    /// Scripted crashes as `move:pid` pairs (`*` for a random process).
    pub crash_at: String,
    pub seed: u64,
    pub max_steps: u64,
    pub done_count: u64,
    pub effectiveness_bound: u64,
    pub bound_ok: bool,
    pub universal_bound: u64,
    pub amo_ok: bool,
    pub done_rows_ok: bool,
    /// Online counters agree with the per-transition records; absent
    /// unless the trace was kept in full.
    pub metering_ok: Option<bool>,
    pub transitions: u64,
    pub shm_reads: u64,
    pub shm_writes: u64,
    pub set_ops: u64,
    pub rank_charges: u64,
    pub weighted_total: u64,
    /// `weighted_total / (n m L(n) L(m))`.
    pub work_ratio: f64,
    pub collision_bounds_applicable: bool,
    pub collision_max_pair_ratio: f64,
    pub collision_total: u64,
    pub collision_total_cap: u64,
    pub collision_ok: bool,
    pub steps: u64,
    pub crashes: u32,
    pub truncated: bool,
    pub passed: bool,
}

pub fn scheduler_name(s: &Scheduler) -> &'static str {
    match s {
        Scheduler::RoundRobin => "rr",
        Scheduler::Random { .. } => "random",
        Scheduler::WorstCase => "theorem3",
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Plain => "plain",
        Mode::Flagged => "flagged",
        Mode::WriteAll => "writeall",
        Mode::Sweep => "sweep",
    }
}

pub fn run_id(cfg: &Config) -> String {
    format!(
        "n{}-m{}-b{}-f{}-{}-{}-s{}",
        cfg.n,
        cfg.m,
        cfg.beta,
        cfg.f,
        mode_name(cfg.mode),
        scheduler_name(&cfg.scheduler),
        cfg.seed
    )
}

/// Runs `cfg` under its own scheduler and checks the trace.
pub fn run_record(cfg: &Config) -> Result<RunRecord> {
    let mut cfg = cfg.clone();
    if cfg.trace == TraceLevel::Off {
        cfg.trace = TraceLevel::Events;
    }
    let tr = run_config(&cfg)?;
    Ok(record_from_trace(&cfg, &tr))
}

pub fn record_from_trace(cfg: &Config, tr: &ExecutionTrace) -> RunRecord {
    let done_count = ledger::effectiveness(tr);
    let effectiveness_bound = ledger::effectiveness_bound(cfg.n, cfg.m, cfg.beta);
    let terminating = cfg.beta >= cfg.m;
    let bound_ok = match ledger::check_effectiveness_bound(tr) {
        Ok(_) => true,
        Err(EffectivenessError::Shortfall(_)) => !terminating,
        Err(EffectivenessError::Incomplete) => true,
    };
    let amo_ok = ledger::check_at_most_once(tr).is_ok();
    let done_rows_ok = ledger::check_done_rows_vs_do_events(tr).is_ok();
    let metering_ok = ledger::recompute_work(tr).map(|w| w == tr.work);
    let collisions = ledger::collision_summary(tr);
    let w = tr.work;
    let scale = u64::from(cfg.n) * u64::from(cfg.m) * log_factor(u64::from(cfg.n)) * log_factor(u64::from(cfg.m));
    let (starvation_factor, crash_horizon) = match cfg.scheduler {
        Scheduler::Random { starvation_factor, random_crash_horizon } => {
            (Some(starvation_factor), random_crash_horizon)
        }
        _ => (None, None),
    };
    let crash_at = cfg
        .crash_at
        .iter()
        .map(|c| match c.pid {
            Some(p) => format!("{}:{}", c.at, p.0),
            None => format!("{}:*", c.at),
        })
        .collect::<Vec<_>>()
        .join(",");
    let passed = amo_ok
        && bound_ok
        && done_rows_ok
        && metering_ok != Some(false)
        && collisions.ok()
        && !(tr.truncated && terminating);
    RunRecord {
        run_id: run_id(cfg),
        n: cfg.n,
        m: cfg.m,
        beta: cfg.beta,
        f: cfg.f,
        mode: cfg.mode,
        scheduler: scheduler_name(&cfg.scheduler).to_owned(),
        starvation_factor,
        crash_horizon,
        crash_at,
        seed: cfg.seed,
        max_steps: cfg.step_budget(),
        done_count,
        effectiveness_bound,
        bound_ok,
        universal_bound: u64::from(cfg.n - cfg.f),
        amo_ok,
        done_rows_ok,
        metering_ok,
        transitions: w.transitions,
        shm_reads: w.shm_reads,
        shm_writes: w.shm_writes,
        set_ops: w.set_ops,
        rank_charges: w.rank_charges,
        weighted_total: w.weighted_total,
        work_ratio: w.weighted_total as f64 / scale as f64,
        collision_bounds_applicable: collisions.applicable,
        collision_max_pair_ratio: collisions.max_pair_ratio,
        collision_total: collisions.total,
        collision_total_cap: collisions.total_cap,
        collision_ok: collisions.ok(),
        steps: tr.moves,
        crashes: tr.crashes,
        truncated: tr.truncated,
        passed,
    }
}
