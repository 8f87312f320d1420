//! Scenario loading, module wiring, metrics and artifact output.

mod batch;
mod report;
mod scenario;
mod world;

pub use batch::{run_batch, run_trials, BatchReport, TrialRow};
pub use report::{
    fmt9, num, BreakerEpisode, ChainMetrics, DoubleSpendRecord, FlagRow, LatencySummary, RunReport, TransferCounts,
};
pub use scenario::{traffic_pairs, AttackPlan, Scenario, ScriptAction, ScriptStep, TrafficSpec};
pub use world::{check_transitions, run, World, WorldEvent};

#[cfg(test)]
mod tests;
