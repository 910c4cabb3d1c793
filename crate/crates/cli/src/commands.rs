use std::fs::File;
use std::io::{self, BufWriter, Write};

use amosim::adversary::from_config;
use amosim::hierarchy::{inverse_epsilon, LevelSummary};
use amosim::record::{mode_name, scheduler_name};
use amosim::{
    explore as run_explorer, log_factor, run_iterative, run_record, run_writeall, Config, ExploreConfig,
    HierarchyConfig, Mode, RunRecord, Scheduler, WorkReport,
};
use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Adversarial, BetaSpec, ExploreArgs, FSpec, HierarchyArgs, RunArgs, SchedulerArg, SweepArgs, Usage};

fn engine_config(n: u32, m: u32, beta: u32, f: u32, mode: Mode, adv: &Adversarial) -> Result<Config> {
    let scheduler = match adv.scheduler {
        SchedulerArg::Rr => Scheduler::RoundRobin,
        SchedulerArg::CrashAt => {
            if adv.crash_at.is_empty() {
                return Err(Usage("--scheduler crash-at needs at least one --crash-at".into()).into());
            }
            Scheduler::RoundRobin
        }
        SchedulerArg::Random => {
            if adv.crash_horizon.is_some() && !adv.crash_at.is_empty() {
                return Err(Usage("--crash-horizon and --crash-at are exclusive".into()).into());
            }
            let horizon = (adv.crash_at.is_empty() && f > 0)
                .then(|| adv.crash_horizon.unwrap_or(2 * u64::from(n) * u64::from(m)));
            Scheduler::Random { starvation_factor: adv.starvation_factor, random_crash_horizon: horizon }
        }
        SchedulerArg::WorstCase => {
            if !adv.crash_at.is_empty() {
                return Err(Usage("the theorem3 schedule places its own crashes; drop --crash-at".into()).into());
            }
            Scheduler::WorstCase
        }
    };
    if adv.starvation_factor == 0 {
        return Err(Usage("--starvation-factor must be positive".into()).into());
    }
    let mut cfg = Config::new(n, m, beta, f)
        .with_mode(mode)
        .with_seed(adv.seed)
        .with_scheduler(scheduler)
        .with_crashes(adv.crash_at.clone());
    cfg.max_steps = adv.max_steps;
    cfg.validate()?;
    Ok(cfg)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn yes_no(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

fn summarize(r: &RunRecord) -> String {
    let mut s = format!(
        "{}: done {}/{} (bound {}), at-most-once {}, bound {}, work {} (ratio {:.3}), {} steps, {} crashes",
        r.run_id,
        r.done_count,
        r.n,
        r.effectiveness_bound,
        yes_no(r.amo_ok),
        yes_no(r.bound_ok),
        r.weighted_total,
        r.work_ratio,
        r.steps,
        r.crashes
    );
    if r.collision_bounds_applicable {
        s += &format!(", collisions {}/{} {}", r.collision_total, r.collision_total_cap, yes_no(r.collision_ok));
    }
    if r.metering_ok == Some(false) {
        s += ", metering MISMATCH";
    }
    if r.truncated {
        s += ", truncated at the step cap";
    }
    s + &format!(": {}", verdict(r.passed))
}

pub fn run(a: RunArgs) -> Result<bool> {
    let cfg = engine_config(a.n, a.m, a.beta, a.f, a.mode.into(), &a.adv)?.with_trace(a.trace.into());
    let rec = run_record(&cfg)?;
    writeln!(io::stdout(), "{}", serde_json::to_string(&rec)?)?;
    eprintln!("{}", summarize(&rec));
    Ok(rec.passed)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("AMO_SIM_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| Usage(format!("AMO_SIM_THREADS must be a count, got `{v}`")))?,
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

#[derive(Serialize)]
struct Aggregate {
    n: u32,
    m: u32,
    beta: u32,
    f: u32,
    runs: usize,
    mean_work_ratio: f64,
    max_work_ratio: f64,
    min_done: u64,
    bound_violations: usize,
    amo_violations: usize,
    collision_violations: usize,
    truncated: usize,
    failed: usize,
}

fn aggregate(group: &[RunRecord]) -> Aggregate {
    let first = &group[0];
    let count = |p: fn(&RunRecord) -> bool| group.iter().filter(|r| p(r)).count();
    Aggregate {
        n: first.n,
        m: first.m,
        beta: first.beta,
        f: first.f,
        runs: group.len(),
        mean_work_ratio: group.iter().map(|r| r.work_ratio).sum::<f64>() / group.len() as f64,
        max_work_ratio: group.iter().map(|r| r.work_ratio).fold(0.0, f64::max),
        min_done: group.iter().map(|r| r.done_count).min().unwrap_or(0),
        bound_violations: count(|r| !r.bound_ok),
        amo_violations: count(|r| !r.amo_ok),
        collision_violations: count(|r| !r.collision_ok),
        truncated: count(|r| r.truncated),
        failed: count(|r| !r.passed),
    }
}

pub fn sweep(a: SweepArgs) -> Result<bool> {
    if a.seeds == 0 {
        return Err(Usage("--seeds must be at least 1".into()).into());
    }
    let mut cfgs = Vec::new();
    for &n in &a.n {
        for &m in &a.m {
            for &b in &a.beta {
                let beta = match b {
                    BetaSpec::Fixed(v) => v,
                    BetaSpec::M => m,
                    BetaSpec::ThreeMSquared => 3 * m * m,
                };
                for &fs in &a.f {
                    let f = match fs {
                        FSpec::Fixed(v) => v,
                        FSpec::Max => m.saturating_sub(1),
                    };
                    for seed in a.adv.seed..a.adv.seed + a.seeds {
                        let adv = Adversarial { seed, ..a.adv.clone() };
                        let cfg = engine_config(n, m, beta, f, a.mode.into(), &adv)
                            .with_context(|| format!("grid point n = {n}, m = {m}, beta = {beta}, f = {f}"))?;
                        cfgs.push(cfg.with_trace(a.trace.into()));
                    }
                }
            }
        }
    }

    let records: Vec<RunRecord> =
        thread_pool()?.install(|| cfgs.par_iter().map(run_record).collect::<Result<_, _>>())?;

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    };
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let csv_path = a.csv.clone().or_else(|| a.out.as_ref().map(|p| p.with_extension("csv")));
    let mut csv = match &csv_path {
        Some(p) => csv::Writer::from_writer(Box::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        ) as Box<dyn Write>),
        None => csv::Writer::from_writer(Box::new(io::stderr()) as Box<dyn Write>),
    };
    let groups: Vec<Aggregate> = records.chunks(a.seeds as usize).map(aggregate).collect();
    for g in &groups {
        csv.serialize(g)?;
    }
    csv.flush()?;

    let failed: usize = groups.iter().map(|g| g.failed).sum();
    for r in records.iter().filter(|r| !r.passed) {
        eprintln!("{}", summarize(r));
    }
    eprintln!("{} runs over {} grid points, {} failed: {}", records.len(), groups.len(), failed, verdict(failed == 0));
    Ok(failed == 0)
}

#[derive(Serialize)]
struct LevelRecord<'a> {
    record: &'static str,
    run_id: &'a str,
    #[serde(flatten)]
    level: &'a LevelSummary,
}

#[derive(Serialize)]
struct HierarchyRecord {
    record: &'static str,
    run_id: String,
    n: u32,
    m: u32,
    f: u32,
    beta: u32,
    mode: Mode,
    scheduler: String,
    seed: u64,
    epsilon: f64,
    inverse_epsilon: u32,
    sizes: Vec<u64>,
    levels: usize,
    done_count: u64,
    loss: u64,
    loss_budget: u64,
    bound_ok: bool,
    amo_ok: bool,
    wa_coverage: Option<u64>,
    coverage_ok: Option<bool>,
    work: WorkReport,
    /// `weighted_total / (n + m^(3 + epsilon) L(n))`.
    work_ratio: f64,
    steps: u64,
    crashes: u32,
    truncated: bool,
    passed: bool,
}

pub fn hierarchy(a: HierarchyArgs, mode: Mode) -> Result<bool> {
    let k = inverse_epsilon(a.epsilon)?;
    let hc = HierarchyConfig { max_steps: a.adv.max_steps, ..HierarchyConfig::new(a.n, a.m, a.f, k) };
    hc.validate()?;
    let ecfg = engine_config(a.n, a.m, hc.beta(), a.f, Mode::Plain, &a.adv)?;
    let mut adv = from_config(&ecfg)?;
    let s = match mode {
        Mode::WriteAll => run_writeall(&hc, &mut *adv)?,
        _ => run_iterative(&hc, &mut *adv)?,
    };

    let run_id = format!(
        "{}-n{}-m{}-f{}-k{}-{}-s{}",
        mode_name(mode),
        a.n,
        a.m,
        a.f,
        k,
        scheduler_name(&ecfg.scheduler),
        a.adv.seed
    );
    let mut out = io::stdout().lock();
    for level in &s.levels {
        serde_json::to_writer(&mut out, &LevelRecord { record: "level", run_id: &run_id, level })?;
        out.write_all(b"\n")?;
    }

    let coverage_ok = s.wa_coverage.map(|c| c == u64::from(a.n));
    let passed = !s.truncated
        && match mode {
            Mode::WriteAll => coverage_ok == Some(true),
            _ => s.amo_ok && s.bound_ok,
        };
    let m = f64::from(a.m);
    let scale = f64::from(a.n) + m.powf(3.0 + a.epsilon) * log_factor(u64::from(a.n)) as f64;
    let rec = HierarchyRecord {
        record: "summary",
        run_id,
        n: a.n,
        m: a.m,
        f: a.f,
        beta: hc.beta(),
        mode,
        scheduler: scheduler_name(&ecfg.scheduler).to_owned(),
        seed: a.adv.seed,
        epsilon: a.epsilon,
        inverse_epsilon: k,
        sizes: s.schedule.sizes.clone(),
        levels: s.levels.len(),
        done_count: s.done,
        loss: u64::from(a.n) - s.done,
        loss_budget: s.loss_budget,
        bound_ok: s.bound_ok,
        amo_ok: s.amo_ok,
        wa_coverage: s.wa_coverage,
        coverage_ok,
        work: s.work,
        work_ratio: s.work.weighted_total as f64 / scale,
        steps: s.moves,
        crashes: s.crashes,
        truncated: s.truncated,
        passed,
    };
    serde_json::to_writer(&mut out, &rec)?;
    out.write_all(b"\n")?;
    out.flush()?;

    let mut line = format!(
        "{}: {} levels, done {}/{} (loss {} of budget {}), work {} (ratio {:.3}), {} crashes",
        rec.run_id,
        rec.levels,
        rec.done_count,
        rec.n,
        rec.loss,
        rec.loss_budget,
        rec.work.weighted_total,
        rec.work_ratio,
        rec.crashes
    );
    match rec.wa_coverage {
        Some(c) => line += &format!(", write-all coverage {c}/{}", rec.n),
        None => line += &format!(", at-most-once {}", yes_no(rec.amo_ok)),
    }
    if rec.truncated {
        line += ", truncated at the step cap";
    }
    eprintln!("{line}: {}", verdict(passed));
    Ok(passed)
}

pub fn explore(a: ExploreArgs) -> Result<bool> {
    let cfg = ExploreConfig {
        depth_limit: a.depth_limit,
        prune_crashes: !a.no_crash_pruning,
        mode: a.mode.into(),
        ..ExploreConfig::new(a.n, a.m, a.beta, a.f)
    };
    let report = run_explorer(&cfg)?;
    writeln!(io::stdout(), "{}", serde_json::to_string(&report)?)?;

    eprintln!(
        "explore n={} m={} beta={} f={}: {} states, {} terminal, max depth {}",
        a.n, a.m, a.beta, a.f, report.states_visited, report.terminal_states, report.max_depth
    );
    if let Some(v) = &report.violation {
        eprintln!("  job {} performed twice after {} moves; replay the `violation.path` moves", v.job, v.path.len());
    }
    match report.min_effectiveness {
        Some(e) => eprintln!(
            "  min effectiveness {e}, bound {}{}",
            report.effectiveness_bound,
            if report.bound_ok() { "" } else { ": SHORTFALL" }
        ),
        None => eprintln!("  no terminal state reached"),
    }
    if let Some(nt) = &report.non_termination {
        let kind = match nt.kind {
            amosim::explorer::NonTerminationKind::Cycle => "a schedule revisits a state, so it can run forever",
            amosim::explorer::NonTerminationKind::DepthLimit => "a path reached the depth limit without terminating",
        };
        let note = if a.beta < a.m { " (expected: beta < m)" } else { "" };
        eprintln!("  non-termination: {kind} after {} moves{note}", nt.path.len());
    }
    eprintln!("{}", verdict(report.passed()));
    Ok(report.passed())
}
