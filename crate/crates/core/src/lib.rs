//! Step-serialized simulation of a wait-free at-most-once job execution
//! algorithm for crash-prone processes over atomic read/write registers,
//! with the checkers, drivers and exhaustive explorer built around it.

pub mod adversary;
pub mod automaton;
pub mod engine;
pub mod error;
pub mod explorer;
pub mod hierarchy;
pub mod ledger;
pub mod ranked_set;
pub mod record;
pub mod registers;
pub mod trace;
pub mod types;

pub use adversary::{Adversary, CrashPlan, RandomScheduler, RoundRobin, Scripted, WorstCase};
pub use automaton::{Action, Mode, ProcessState, Status, StepCost, WitnessKind};
pub use engine::{run, run_config, Config, CrashAt, Move, RunEnd, Scheduler, Simulation};
pub use error::{Result, SimError};
pub use explorer::{counterexample_replay, explore, ExplorationReport, ExploreConfig};
pub use hierarchy::{mapf, run_iterative, run_writeall, HierarchyConfig, HierarchySummary, LevelSchedule, SuperJob};
pub use ranked_set::RankedSet;
pub use record::{run_record, RunRecord};
pub use registers::SharedMemory;
pub use trace::{Event, ExecutionTrace, TraceLevel, WorkReport};
pub use types::{log_factor, JobId, JobMap, ProcessId};
