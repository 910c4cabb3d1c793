use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};

use amosim::adversary::from_config;
use amosim::ledger::{check_at_most_once_levels, check_done_rows_vs_do_events, recompute_work};
use amosim::{
    explore, run, run_iterative, run_record, run_writeall, Adversary, Config, ExecutionTrace, ExploreConfig,
    HierarchyConfig, Move, ProcessId, Scheduler, Simulation, TraceLevel,
};
use proptest::prelude::*;

/// Schedules driven by a proptest-generated pick list: each pick names a
/// live process by index and says whether to crash it.
struct Walk {
    picks: Vec<(u8, bool)>,
    i: usize,
}

impl Adversary for Walk {
    fn next_move(&mut self, sim: &Simulation) -> Move {
        let live: Vec<ProcessId> = sim.live().collect();
        let (k, crash) = self.picks[self.i % self.picks.len()];
        self.i += 1;
        let p = live[usize::from(k) % live.len()];
        if crash && sim.crashes_used() < sim.f() {
            Move::Crash(p)
        } else {
            Move::Step(p)
        }
    }
}

/// Jobs performed, counted straight from the event log; panics on a repeat.
fn distinct_jobs(tr: &ExecutionTrace) -> u64 {
    let mut seen = BTreeSet::new();
    for (pid, job, _) in tr.do_events() {
        assert!(seen.insert(job), "job {job} performed again by {pid}");
    }
    seen.len() as u64
}

fn min_jobs(n: u32, m: u32, beta: u32) -> u64 {
    i64::from(n).saturating_sub(i64::from(beta) + i64::from(m) - 2).max(0) as u64
}

fn config() -> impl Strategy<Value = (u32, u32, u32, u32, u64)> {
    (1u32..=6)
        .prop_flat_map(|m| (Just(m), m..=120, 1..=3 * m * m + 3, 0..m, any::<u64>()))
        .prop_map(|(m, n, beta, f, seed)| (n, m, beta, f, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_schedules_never_repeat_a_job((n, m, beta, f, seed) in config()) {
        let cfg = Config::new(n, m, beta, f)
            .with_seed(seed)
            .with_scheduler(Scheduler::Random { starvation_factor: 8, random_crash_horizon: Some(4 * u64::from(n)) });
        let tr = run(&cfg, from_config(&cfg).unwrap().as_mut()).unwrap();
        let done = distinct_jobs(&tr);
        prop_assert!(check_done_rows_vs_do_events(&tr).is_ok());
        prop_assert_eq!(recompute_work(&tr), Some(tr.work));
        prop_assert!(tr.crashes <= f);
        if beta >= m {
            prop_assert!(tr.is_complete());
            prop_assert!(done >= min_jobs(n, m, beta), "done {} < {}", done, min_jobs(n, m, beta));
        }
    }

    #[test]
    fn arbitrary_schedules_keep_both_guarantees(
        (n, m, beta, f, _seed) in config(),
        picks in prop::collection::vec((any::<u8>(), prop::bool::weighted(0.03)), 1..64),
    ) {
        prop_assume!(beta >= m);
        let cfg = Config::new(n, m, beta, f);
        let tr = run(&cfg, &mut Walk { picks, i: 0 }).unwrap();
        prop_assert!(tr.is_complete(), "wait-free run did not finish within {} moves", cfg.step_budget());
        let done = distinct_jobs(&tr);
        prop_assert!(done >= min_jobs(n, m, beta));
        prop_assert!(check_done_rows_vs_do_events(&tr).is_ok());
    }

    #[test]
    fn records_reproduce_field_for_field((n, m, beta, f, seed) in config()) {
        let cfg = Config::new(n, m, beta, f)
            .with_seed(seed)
            .with_scheduler(Scheduler::Random { starvation_factor: 16, random_crash_horizon: Some(2 * u64::from(n)) });
        prop_assert_eq!(run_record(&cfg).unwrap(), run_record(&cfg).unwrap());
    }
}

type Minima = HashMap<(u32, u32, u32, u32), u64>;

fn exhaustive_minimum(n: u32, m: u32, beta: u32, f: u32) -> u64 {
    static CACHE: OnceLock<Mutex<Minima>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&v) = cache.lock().unwrap().get(&(n, m, beta, f)) {
        return v;
    }
    let report = explore(&ExploreConfig::new(n, m, beta, f)).unwrap();
    assert!(report.passed());
    let v = report.min_effectiveness.unwrap();
    cache.lock().unwrap().insert((n, m, beta, f), v);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// No sampled schedule does worse than the exhaustive minimum.
    #[test]
    fn sampled_schedules_stay_above_the_exhaustive_minimum(
        (n, beta, f) in (3u32..=5, 2u32..=3, 0u32..=1),
        picks in prop::collection::vec((any::<u8>(), prop::bool::weighted(0.1)), 1..32),
    ) {
        let cfg = Config::new(n, 2, beta, f).with_trace(TraceLevel::Events);
        let tr = run(&cfg, &mut Walk { picks, i: 0 }).unwrap();
        prop_assert!(tr.is_complete());
        prop_assert!(distinct_jobs(&tr) >= exhaustive_minimum(n, 2, beta, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn iterated_runs_stay_within_the_loss_budget(
        (m, n, f, k, seed) in (1u32..=4).prop_flat_map(|m| (Just(m), (m * 8)..=1500, 0..m, 1u32..=3, any::<u64>())),
    ) {
        let hc = HierarchyConfig::new(n, m, f, k);
        let cfg = Config::new(n, m, hc.beta(), f)
            .with_seed(seed)
            .with_scheduler(Scheduler::Random { starvation_factor: 16, random_crash_horizon: Some(u64::from(n)) });
        let s = run_iterative(&hc, from_config(&cfg).unwrap().as_mut()).unwrap();
        prop_assert!(!s.truncated);
        prop_assert!(check_at_most_once_levels(&s.traces).is_ok());
        let base: BTreeSet<u32> = s
            .traces
            .iter()
            .flat_map(|t| t.do_events().flat_map(|(_, _, b)| b.to_vec()))
            .collect();
        prop_assert_eq!(base.len() as u64, s.done);
        prop_assert!(u64::from(n) - s.done <= s.loss_budget);

        let w = run_writeall(&hc, from_config(&cfg).unwrap().as_mut()).unwrap();
        prop_assert_eq!(w.wa_coverage, Some(u64::from(n)));
    }
}
