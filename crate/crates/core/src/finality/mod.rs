//! How long an inter-chain transaction must mature on its source chain.
//!
//! Each ordered chain pair carries a tolerated reversal probability
//! (`epsilon`). Given the source chain's estimated adversary power and block
//! interval, the finality table records the minimal confirmation depth that
//! meets the pair's `epsilon` and the corresponding advisory wait.

mod model;

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::FinalityError;
use crate::types::{ChainId, Time};

pub use model::{
    acceptance_period, catch_up_probability, min_confirmations, min_confirmations_with, CatchUpRace, FinalityModel,
    UNDERFLOW_CLAMP,
};

/// Convenience names for common `epsilon` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SecurityLevel {
    High,
    Med,
    Low,
}

impl SecurityLevel {
    pub fn epsilon(self) -> f64 {
        match self {
            SecurityLevel::High => 1e-4,
            SecurityLevel::Med => 1e-3,
            SecurityLevel::Low => 1e-2,
        }
    }
}

impl FromStr for SecurityLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HIGH" => Ok(SecurityLevel::High),
            "MED" => Ok(SecurityLevel::Med),
            "LOW" => Ok(SecurityLevel::Low),
            other => Err(format!("unknown security level {other:?} (expected HIGH, MED or LOW)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollaborationPolicy {
    pub source: ChainId,
    pub dest: ChainId,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalityInputs {
    /// Adversary mining-power fraction.
    pub q: f64,
    /// Estimated mean block interval, seconds.
    pub block_interval: f64,
}

impl FinalityInputs {
    pub fn new(q: f64, block_interval: f64) -> Result<Self, FinalityError> {
        model::check_fraction(q)?;
        if !(block_interval > 0.0 && block_interval.is_finite()) {
            return Err(FinalityError::InvalidInterval(block_interval));
        }
        Ok(Self { q, block_interval })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TableStatus {
    Ready { confirmations: u32, advisory_wait: f64 },
    /// Source adversary at or above one half: no depth is safe.
    Halted,
    /// No statistics for the source chain yet.
    MissingStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub source: ChainId,
    pub dest: ChainId,
    pub epsilon: f64,
    pub inputs: Option<FinalityInputs>,
    pub status: TableStatus,
    pub computed_at: Time,
}

impl TableEntry {
    pub fn confirmations(&self) -> Option<u32> {
        match self.status {
            TableStatus::Ready { confirmations, .. } => Some(confirmations),
            _ => None,
        }
    }
}

/// Required depth per ordered chain pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinalityTimeTable {
    entries: BTreeMap<(ChainId, ChainId), TableEntry>,
}

impl FinalityTimeTable {
    pub fn get(&self, source: ChainId, dest: ChainId) -> Option<&TableEntry> {
        self.entries.get(&(source, dest))
    }

    pub fn entries(&self) -> impl Iterator<Item = &TableEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Builds a complete table. Sources at `q >= 0.5` get a halted entry; sources
/// without statistics get a per-pair `MissingStats` entry.
pub fn build_table(
    model: &dyn FinalityModel,
    stats: &BTreeMap<ChainId, FinalityInputs>,
    policies: &[CollaborationPolicy],
    now: Time,
) -> FinalityTimeTable {
    let mut entries = BTreeMap::new();
    for p in policies {
        let inputs = stats.get(&p.source).copied();
        let status = match inputs {
            None => TableStatus::MissingStats,
            Some(i) => match min_confirmations_with(model, i.q, p.epsilon) {
                Ok(z) => TableStatus::Ready {
                    confirmations: z,
                    advisory_wait: acceptance_period(z, i.block_interval),
                },
                Err(_) => TableStatus::Halted,
            },
        };
        entries.insert(
            (p.source, p.dest),
            TableEntry {
                source: p.source,
                dest: p.dest,
                epsilon: p.epsilon,
                inputs,
                status,
                computed_at: now,
            },
        );
    }
    FinalityTimeTable { entries }
}

/// The finality module as a running service: latest inputs per chain plus
/// the most recently built table.
pub struct FinalityService {
    model: Arc<dyn FinalityModel>,
    policies: Vec<CollaborationPolicy>,
    inputs: BTreeMap<ChainId, FinalityInputs>,
    table: FinalityTimeTable,
    rebuilds: u64,
}

impl FinalityService {
    pub fn new(model: Arc<dyn FinalityModel>, policies: Vec<CollaborationPolicy>) -> Self {
        Self {
            model,
            policies,
            inputs: BTreeMap::new(),
            table: FinalityTimeTable::default(),
            rebuilds: 0,
        }
    }

    pub fn model_id(&self) -> &'static str {
        self.model.id()
    }

    pub fn policies(&self) -> &[CollaborationPolicy] {
        &self.policies
    }

    pub fn table(&self) -> &FinalityTimeTable {
        &self.table
    }

    pub fn inputs(&self) -> &BTreeMap<ChainId, FinalityInputs> {
        &self.inputs
    }

    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    pub fn set_inputs(&mut self, chain: ChainId, inputs: FinalityInputs) {
        self.inputs.insert(chain, inputs);
    }

    pub fn rebuild(&mut self, now: Time) {
        self.table = build_table(self.model.as_ref(), &self.inputs, &self.policies, now);
        self.rebuilds += 1;
    }

    /// Stats push from a relay node: store and rebuild immediately.
    pub fn push_stats(&mut self, chain: ChainId, inputs: FinalityInputs, now: Time) {
        self.set_inputs(chain, inputs);
        self.rebuild(now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(s: u32, d: u32, epsilon: f64) -> CollaborationPolicy {
        CollaborationPolicy {
            source: ChainId(s),
            dest: ChainId(d),
            epsilon,
        }
    }

    #[test]
    fn single_pair_composes() {
        let mut stats = BTreeMap::new();
        stats.insert(ChainId(0), FinalityInputs::new(0.1, 10.0).unwrap());
        let t = build_table(&CatchUpRace, &stats, &[policy(0, 1, 1e-3)], 5.0);
        let e = t.get(ChainId(0), ChainId(1)).unwrap();
        assert_eq!(
            e.status,
            TableStatus::Ready {
                confirmations: 5,
                advisory_wait: 50.0
            }
        );
        assert_eq!(e.inputs, stats.get(&ChainId(0)).copied());
        assert_eq!(e.computed_at, 5.0);
    }

    #[test]
    fn shared_source_same_depth() {
        let mut stats = BTreeMap::new();
        stats.insert(ChainId(0), FinalityInputs::new(0.2, 10.0).unwrap());
        let t = build_table(&CatchUpRace, &stats, &[policy(0, 1, 1e-3), policy(0, 2, 1e-3)], 0.0);
        assert_eq!(
            t.get(ChainId(0), ChainId(1)).unwrap().confirmations(),
            t.get(ChainId(0), ChainId(2)).unwrap().confirmations()
        );
    }

    #[test]
    fn majority_source_halted_missing_stats_isolated() {
        let mut stats = BTreeMap::new();
        stats.insert(ChainId(0), FinalityInputs::new(0.51, 10.0).unwrap());
        let t = build_table(&CatchUpRace, &stats, &[policy(0, 1, 1e-3), policy(2, 1, 1e-3)], 0.0);
        assert_eq!(t.get(ChainId(0), ChainId(1)).unwrap().status, TableStatus::Halted);
        assert_eq!(t.get(ChainId(2), ChainId(1)).unwrap().status, TableStatus::MissingStats);
    }

    #[test]
    fn labels_map_to_epsilon() {
        assert_eq!("MED".parse::<SecurityLevel>().unwrap().epsilon(), 1e-3);
        assert_eq!("HIGH".parse::<SecurityLevel>().unwrap().epsilon(), 1e-4);
        assert_eq!("LOW".parse::<SecurityLevel>().unwrap().epsilon(), 1e-2);
        assert!("med".parse::<SecurityLevel>().is_err());
    }

    #[test]
    fn service_rebuild_reflects_latest_inputs() {
        let mut svc = FinalityService::new(Arc::new(CatchUpRace), vec![policy(0, 1, 1e-3)]);
        svc.push_stats(ChainId(0), FinalityInputs::new(0.0, 10.0).unwrap(), 1.0);
        assert_eq!(svc.table().get(ChainId(0), ChainId(1)).unwrap().confirmations(), Some(1));
        svc.push_stats(ChainId(0), FinalityInputs::new(0.1, 12.0).unwrap(), 2.0);
        let e = svc.table().get(ChainId(0), ChainId(1)).unwrap();
        assert_eq!(e.confirmations(), Some(5));
        assert_eq!(e.inputs.unwrap().block_interval, 12.0);
    }
}
