mod commands;
mod config_file;

use std::path::PathBuf;
use std::process::ExitCode;

use amosim::engine::DEFAULT_STARVATION_FACTOR;
use amosim::{CrashAt, Mode, ProcessId, SimError, TraceLevel};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "amosim", version, about = "Simulate and check the KKβ at-most-once algorithm")]
pub struct Cli {
    /// TOML file whose keys are the subcommand's flag names. Flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One execution; prints a single JSON record.
    Run(RunArgs),
    /// A grid of executions; prints one JSON record per run.
    Sweep(SweepArgs),
    /// The iterated algorithm over super-jobs.
    Iterate(HierarchyArgs),
    /// The Write-All variant of the iterated algorithm.
    Writeall(HierarchyArgs),
    /// Every interleaving and crash placement of a small instance.
    Explore(ExploreArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SchedulerArg {
    Rr,
    Random,
    /// Crash processes 1..m-1 right after each announces a job, then run m alone.
    #[value(name = "theorem3")]
    WorstCase,
    /// Round robin with the crashes given by `--crash-at`.
    CrashAt,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Plain,
    Flagged,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Plain => Mode::Plain,
            ModeArg::Flagged => Mode::Flagged,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TraceArg {
    Events,
    /// Also keeps per-transition costs, enabling the metering cross-check.
    Full,
}

impl From<TraceArg> for TraceLevel {
    fn from(t: TraceArg) -> TraceLevel {
        match t {
            TraceArg::Events => TraceLevel::Events,
            TraceArg::Full => TraceLevel::Full,
        }
    }
}

/// `move:pid`, or `move:*` to crash whichever live process the scheduler
/// picks.
fn parse_crash(s: &str) -> Result<CrashAt, String> {
    let (at, pid) = s.split_once(':').ok_or_else(|| format!("expected MOVE:PID, got `{s}`"))?;
    let at = at.trim().parse::<u64>().map_err(|e| format!("bad move in `{s}`: {e}"))?;
    let pid = match pid.trim() {
        "*" => None,
        p => Some(ProcessId(p.parse::<u32>().map_err(|e| format!("bad pid in `{s}`: {e}"))?)),
    };
    Ok(CrashAt { at, pid })
}

#[derive(Args, Debug, Clone)]
struct Adversarial {
    #[arg(long, value_enum, default_value = "rr")]
    scheduler: SchedulerArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crash before global move MOVE (`MOVE:PID` or `MOVE:*`); repeatable.
    #[arg(long = "crash-at", value_name = "MOVE:PID", value_parser = parse_crash)]
    crash_at: Vec<CrashAt>,
    /// Random scheduler: no process waits longer than m times this.
    #[arg(long, default_value_t = DEFAULT_STARVATION_FACTOR)]
    starvation_factor: u32,
    /// Random scheduler without `--crash-at`: draw f crashes at moves
    /// below this horizon [default: 2 n m].
    #[arg(long, value_name = "MOVES")]
    crash_horizon: Option<u64>,
    /// Step cap; the run is reported as truncated when it hits it.
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    m: u32,
    #[arg(long)]
    beta: u32,
    #[arg(long, default_value_t = 0)]
    f: u32,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "full")]
    trace: TraceArg,
    #[command(flatten)]
    adv: Adversarial,
}

/// A β grid entry: a number, `m`, or `3m2` (three times m squared).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BetaSpec {
    Fixed(u32),
    M,
    ThreeMSquared,
}

fn parse_beta(s: &str) -> Result<BetaSpec, String> {
    match s.trim() {
        "m" => Ok(BetaSpec::M),
        "3m2" | "3m^2" => Ok(BetaSpec::ThreeMSquared),
        v => v.parse().map(BetaSpec::Fixed).map_err(|_| format!("expected a number, `m` or `3m2`, got `{s}`")),
    }
}

/// An f grid entry: a number or `max` (m - 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum FSpec {
    Fixed(u32),
    Max,
}

fn parse_f(s: &str) -> Result<FSpec, String> {
    match s.trim() {
        "max" => Ok(FSpec::Max),
        v => v.parse().map(FSpec::Fixed).map_err(|_| format!("expected a number or `max`, got `{s}`")),
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    m: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "3m2", value_parser = parse_beta)]
    beta: Vec<BetaSpec>,
    #[arg(long, value_delimiter = ',', default_value = "0", value_parser = parse_f)]
    f: Vec<FSpec>,
    /// Seeds per grid point, counted up from `--seed`.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "events")]
    trace: TraceArg,
    /// JSON-lines output; standard output when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Aggregate CSV; defaults to the `--out` path with a `.csv` extension,
    /// or standard error.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[command(flatten)]
    adv: Adversarial,
}

#[derive(Args, Debug)]
struct HierarchyArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    m: u32,
    #[arg(long, default_value_t = 0)]
    f: u32,
    /// Level parameter; 1/epsilon must be a positive integer.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[command(flatten)]
    adv: Adversarial,
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[arg(long)]
    n: u32,
    #[arg(long)]
    m: u32,
    #[arg(long)]
    beta: u32,
    #[arg(long, default_value_t = 0)]
    f: u32,
    #[arg(long, default_value_t = 10_000)]
    depth_limit: u64,
    /// Branch on crashes before every action, not only before writes and
    /// checks.
    #[arg(long)]
    no_crash_pruning: bool,
    #[arg(long, value_enum, default_value = "plain")]
    mode: ModeArg,
}

/// A usage problem found after argument parsing.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Usage>()
            || c.is::<std::io::Error>()
            || c.is::<toml::de::Error>()
            || matches!(c.downcast_ref::<SimError>(), Some(SimError::Config(_)))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .format_target(false)
        .init();

    let args = match config_file::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };

    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Iterate(a) => commands::hierarchy(a, Mode::Flagged),
        Command::Writeall(a) => commands::hierarchy(a, Mode::WriteAll),
        Command::Explore(a) => commands::explore(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
