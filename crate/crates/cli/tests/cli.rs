use std::process::{Command, Output};

use serde_json::Value;

fn amosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amosim")).args(args).env("AMO_SIM_THREADS", "1").output().expect("spawn amosim")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad json line {l:?}: {e}")))
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn worst_case_run_hits_the_effectiveness_formula() {
    let out = amosim(&["run", "--n", "50", "--m", "3", "--beta", "3", "--f", "2", "--scheduler", "theorem3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let recs = json_lines(&out);
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert_eq!(r["done_count"], 46);
    assert_eq!(r["effectiveness_bound"], 46);
    assert_eq!(r["bound_ok"], true);
    assert_eq!(r["amo_ok"], true);
    assert_eq!(r["metering_ok"], true);
    assert_eq!(r["crashes"], 2);
}

#[test]
fn small_beta_warns_and_stays_bounded() {
    let out = amosim(&[
        "run",
        "--n",
        "10",
        "--m",
        "2",
        "--beta",
        "1",
        "--scheduler",
        "random",
        "--seed",
        "7",
        "--max-steps",
        "3000",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("beta < m: termination not guaranteed"));
    let r = &json_lines(&out)[0];
    assert!(r["steps"].as_u64().unwrap() <= 3000);
    assert_eq!(r["amo_ok"], true);
}

#[test]
fn run_output_is_reproducible() {
    let args = ["run", "--n", "60", "--m", "3", "--beta", "27", "--f", "2", "--scheduler", "random", "--seed", "11"];
    let a = amosim(&args);
    let b = amosim(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn scripted_crashes_are_applied() {
    let out = amosim(&[
        "run",
        "--n",
        "20",
        "--m",
        "3",
        "--beta",
        "3",
        "--f",
        "2",
        "--scheduler",
        "crash-at",
        "--crash-at",
        "5:1",
        "--crash-at",
        "9:*",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert_eq!(r["crashes"], 2);
    assert_eq!(r["crash_at"], "5:1,9:*");
}

#[test]
fn configuration_errors_exit_2() {
    let cases: &[&[&str]] = &[
        &["run", "--m", "2", "--beta", "2"],
        &["run", "--n", "10", "--m", "2", "--beta", "2", "--f", "2"],
        &["run", "--n", "1", "--m", "2", "--beta", "2"],
        &["run", "--n", "10", "--m", "2", "--beta", "2", "--unknown-flag"],
        &["run", "--n", "10", "--m", "2", "--beta", "2", "--scheduler", "crash-at"],
        &["run", "--n", "10", "--m", "2", "--beta", "2", "--crash-at", "nonsense"],
        &["iterate", "--n", "100", "--m", "2", "--epsilon", "0.3"],
        &["explore", "--n", "4", "--m", "2", "--beta", "0"],
        &["sweep", "--n", "10", "--m", "2", "--seeds", "0"],
    ];
    for args in cases {
        let out = amosim(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(out.stdout.is_empty(), "{args:?} wrote to stdout");
    }
}

#[test]
fn config_file_supplies_flags_and_the_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "n = 50\nm = 3\nbeta = 3\nf = 2\nscheduler = \"theorem3\"\n").unwrap();
    let p = path.to_str().unwrap();

    let out = amosim(&["run", "--config", p]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json_lines(&out)[0]["done_count"], 46);

    let out = amosim(&["--config", p, "run", "--n", "60"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json_lines(&out)[0]["done_count"], 56);

    std::fs::write(&path, "n = 50\nm = 3\nbeta = 3\nsurprise = 1\n").unwrap();
    let out = amosim(&["run", "--config", p]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("surprise"));
}

#[test]
fn sweep_writes_one_line_per_run_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("grid.jsonl");
    let out = amosim(&[
        "sweep",
        "--n",
        "30,40,50",
        "--m",
        "2,3,4",
        "--seeds",
        "10",
        "--f",
        "max",
        "--scheduler",
        "random",
        "--out",
        jsonl.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(&jsonl).unwrap();
    assert_eq!(text.lines().count(), 90);
    for line in text.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["passed"], true, "{line}");
    }

    let csv = std::fs::read_to_string(jsonl.with_extension("csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(
        header.contains("mean_work_ratio") && header.contains("max_work_ratio") && header.contains("bound_violations")
    );
    assert_eq!(lines.count(), 9);
}

#[test]
fn sweep_is_deterministic_per_seed() {
    let args =
        ["sweep", "--n", "40", "--m", "3", "--beta", "m,3m2", "--f", "2", "--seeds", "4", "--scheduler", "random"];
    let a = amosim(&args);
    let b = amosim(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let recs = json_lines(&a);
    assert_eq!(recs.len(), 8);
    assert_eq!(recs[0]["beta"], 3);
    assert_eq!(recs[4]["beta"], 27);
    assert_ne!(recs[0]["run_id"], recs[1]["run_id"]);
}

#[test]
fn sweep_reports_a_violation_with_exit_1() {
    // A step cap far below what β >= m needs to terminate counts as a failure.
    let out = amosim(&["sweep", "--n", "40", "--m", "2", "--beta", "2", "--seeds", "2", "--max-steps", "10"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert_eq!(json_lines(&out).len(), 2);
}

#[test]
fn iterate_emits_levels_then_a_summary() {
    let out = amosim(&[
        "iterate",
        "--n",
        "4096",
        "--m",
        "2",
        "--f",
        "1",
        "--epsilon",
        "1",
        "--scheduler",
        "random",
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let recs = json_lines(&out);
    let (summary, levels) = recs.split_last().unwrap();
    assert_eq!(summary["record"], "summary");
    assert!(levels.iter().all(|l| l["record"] == "level"));
    assert_eq!(levels.len() as u64, summary["levels"].as_u64().unwrap());
    assert_eq!(summary["amo_ok"], true);
    assert_eq!(summary["bound_ok"], true);
    assert!(summary["loss"].as_u64().unwrap() <= summary["loss_budget"].as_u64().unwrap());
    // (2 + k)(m - 1) m L(n) L(m) + 3m^2 + m - 2 with L(4096) = 13, L(2) = 2
    assert_eq!(summary["loss_budget"], 3 * 2 * 13 * 2 + 12);
}

#[test]
fn writeall_covers_every_cell() {
    let out = amosim(&["writeall", "--n", "3000", "--m", "3", "--f", "1", "--scheduler", "random", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let recs = json_lines(&out);
    let summary = recs.last().unwrap();
    assert_eq!(summary["wa_coverage"], 3000);
    assert_eq!(summary["coverage_ok"], true);
    assert!(stderr(&out).contains("write-all coverage 3000/3000"));
}

#[test]
fn explore_small_instances() {
    let out = amosim(&["explore", "--n", "4", "--m", "2", "--beta", "2", "--f", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert!(r["violation"].is_null());
    assert!(r["min_effectiveness"].as_u64().unwrap() >= 2);

    let out = amosim(&["explore", "--n", "5", "--m", "2", "--beta", "2", "--f", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert!(r["min_effectiveness"].as_u64().unwrap() >= 3);
    assert!(stderr(&out).contains("min effectiveness"));
}

#[test]
fn explore_depth_blow_up_exits_1_with_a_diagnosis() {
    let out = amosim(&["explore", "--n", "4", "--m", "2", "--beta", "2", "--depth-limit", "6"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("depth limit"));
    let r = &json_lines(&out)[0];
    assert_eq!(r["non_termination"]["kind"], "depth_limit");
}
