//! Independent trials of one scenario with seeds `seed + i`, run in parallel.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::report::{num, outcome_str, pretty, write_files, RunReport};
use super::scenario::Scenario;
use super::world::run;
use crate::error::Error;

/// Runs `trials` copies of `sc` and maps each result through `f`, in seed order.
pub fn run_trials<T, F>(sc: &Scenario, trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, Result<RunReport, Error>) -> T + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = sc.clone();
            s.seed = sc.seed.wrapping_add(i);
            let seed = s.seed;
            f(seed, run(&s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub seed: u64,
    pub events: u64,
    pub observed: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub pending: u64,
    pub ledger_len: u64,
    pub reversals_after_delivery: u64,
    pub flags: u64,
    pub breaker_episodes: u64,
    /// Double-spend outcome of the first attack, if any.
    pub double_spend: Option<&'static str>,
    pub mean_latency: f64,
}

impl TrialRow {
    pub fn from_report(r: &RunReport) -> Self {
        Self {
            seed: r.seed,
            events: r.events,
            observed: r.transfers.observed,
            delivered: r.transfers.delivered,
            dropped: r.transfers.dropped,
            pending: r.transfers.pending + r.transfers.committed,
            ledger_len: r.transfers.ledger_len,
            reversals_after_delivery: r.transfers.reversals_after_delivery,
            flags: r.flags.iter().filter(|f| f.node.is_some()).count() as u64,
            breaker_episodes: r.breakers.len() as u64,
            double_spend: r.double_spends.first().and_then(|d| d.outcome).map(outcome_str),
            mean_latency: r.latency.mean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub base_seed: u64,
    pub rows: Vec<TrialRow>,
}

impl BatchReport {
    pub fn total(&self, f: impl Fn(&TrialRow) -> u64) -> u64 {
        self.rows.iter().map(f).sum()
    }

    pub fn summary_json(&self) -> Value {
        let mut ds: BTreeMap<&str, u64> = BTreeMap::new();
        for r in &self.rows {
            if let Some(o) = r.double_spend {
                *ds.entry(o).or_default() += 1;
            }
        }
        let delivered = self.total(|r| r.delivered);
        let reversals = self.total(|r| r.reversals_after_delivery);
        json!({
            "base_seed": self.base_seed,
            "trials": self.rows.len(),
            "events": self.total(|r| r.events),
            "observed": self.total(|r| r.observed),
            "delivered": delivered,
            "dropped": self.total(|r| r.dropped),
            "pending": self.total(|r| r.pending),
            "ledger_len": self.total(|r| r.ledger_len),
            "reversals_after_delivery": reversals,
            "reversal_rate": if delivered > 0 { num(reversals as f64 / delivered as f64) } else { Value::Null },
            "flags": self.total(|r| r.flags),
            "breaker_episodes": self.total(|r| r.breaker_episodes),
            "double_spends": ds,
        })
    }

    pub fn trials_csv(&self) -> String {
        let mut s = String::from(
            "seed,events,observed,delivered,dropped,pending,ledger_len,reversals,flags,breaker_episodes,double_spend,mean_latency\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.events,
                r.observed,
                r.delivered,
                r.dropped,
                r.pending,
                r.ledger_len,
                r.reversals_after_delivery,
                r.flags,
                r.breaker_episodes,
                r.double_spend.unwrap_or(""),
                super::report::fmt9(r.mean_latency)
            );
        }
        s
    }

    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>, Error> {
        write_files(
            dir,
            &[("trials.csv", self.trials_csv()), ("summary.json", pretty(&self.summary_json()))],
        )
    }
}

/// Runs the batch; the first failing trial (lowest seed) aborts it.
pub fn run_batch(sc: &Scenario, trials: u64) -> Result<BatchReport, Error> {
    let rows = run_trials(sc, trials, |_, r| r.map(|r| TrialRow::from_report(&r)));
    Ok(BatchReport {
        base_seed: sc.seed,
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    })
}
