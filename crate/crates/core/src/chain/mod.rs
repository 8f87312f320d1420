//! Proof-of-work sub-blockchain simulation.
//!
//! Each chain is a full mesh of miner nodes plus relay observer nodes. Every
//! node keeps its own [`BlockStore`] so that gossip latency, eclipse filters
//! and withheld branches produce genuinely divergent views.

mod attack;
mod mempool;
mod sim;
mod store;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ChainError;
use crate::kernel::StreamRng;
use crate::types::{BlockId, ChainId, NodeId, Time, TxId};

pub use attack::{AttackKind, AttackSpec, DoubleSpendOutcome};
pub(crate) use attack::check_disjoint;
pub use mempool::Mempool;
pub use sim::{Chain, ChainEvent, ChainNode, ChainNotice, NodeRole, Received};
pub use store::{fork_choice, BlockStore, InsertOutcome};

pub const DEFAULT_BLOCK_CAPACITY: usize = 100;
const SHARE_TOLERANCE: f64 = 1e-9;

/// Gossip delay distribution for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LatencyModel {
    Constant { delay: f64 },
    Uniform { min: f64, max: f64 },
    /// `min` plus an exponential with the given mean.
    ShiftedExp { min: f64, mean: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Uniform { min: 0.1, max: 0.5 }
    }
}

impl LatencyModel {
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            LatencyModel::Constant { delay } => delay,
            LatencyModel::Uniform { min, max } => {
                if max > min {
                    rng.gen_range(min..=max)
                } else {
                    min
                }
            }
            LatencyModel::ShiftedExp { min, mean } => {
                let u: f64 = rng.gen();
                min - mean * (1.0 - u).ln()
            }
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            LatencyModel::Constant { delay } => delay,
            LatencyModel::Uniform { min, max } => 0.5 * (min + max),
            LatencyModel::ShiftedExp { min, mean } => min + mean * std::f64::consts::LN_2,
        }
    }

    /// 0.999 quantile; a practical upper bound for timing margins.
    pub fn high(&self) -> f64 {
        match *self {
            LatencyModel::Constant { delay } => delay,
            LatencyModel::Uniform { min, max } => min + 0.999 * (max - min),
            LatencyModel::ShiftedExp { min, mean } => min + mean * 1000f64.ln(),
        }
    }

    fn check(&self) -> Result<(), String> {
        let ok = match *self {
            LatencyModel::Constant { delay } => delay >= 0.0 && delay.is_finite(),
            LatencyModel::Uniform { min, max } => min >= 0.0 && max >= min && max.is_finite(),
            LatencyModel::ShiftedExp { min, mean } => {
                min >= 0.0 && mean >= 0.0 && min.is_finite() && mean.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("{self:?}"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub id: ChainId,
    pub name: String,
    /// Hash-power share per miner; miner `i` is node `i`.
    pub shares: Vec<f64>,
    /// Target mean block interval in seconds.
    pub block_interval: f64,
    pub latency: LatencyModel,
    pub block_capacity: usize,
    /// Number of relay observer nodes appended after the miners.
    pub relays: usize,
}

impl ChainSpec {
    pub fn equal_shares(id: ChainId, name: impl Into<String>, miners: usize, block_interval: f64) -> Self {
        Self {
            id,
            name: name.into(),
            shares: vec![1.0 / miners as f64; miners],
            block_interval,
            latency: LatencyModel::default(),
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            relays: 1,
        }
    }

    pub fn miners(&self) -> usize {
        self.shares.len()
    }

    pub fn node_count(&self) -> usize {
        self.shares.len() + self.relays
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let sum: f64 = self.shares.iter().sum();
        let each_ok = self.shares.iter().all(|s| (0.0..=1.0).contains(s));
        if self.shares.is_empty() || !each_ok || (sum - 1.0).abs() > SHARE_TOLERANCE {
            return Err(ChainError::InvalidShares {
                chain: self.name.clone(),
                sum,
            });
        }
        if !(self.block_interval > 0.0 && self.block_interval.is_finite()) {
            return Err(ChainError::InvalidInterval {
                chain: self.name.clone(),
                interval: self.block_interval,
            });
        }
        if self.block_capacity == 0 {
            return Err(ChainError::InvalidCapacity {
                chain: self.name.clone(),
            });
        }
        self.latency.check().map_err(|reason| ChainError::InvalidLatency {
            chain: self.name.clone(),
            reason,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxKind {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tx {
    pub id: TxId,
    pub kind: TxKind,
    pub source: ChainId,
    pub dest: ChainId,
    pub payload: Vec<u8>,
    pub created_at: Time,
    /// A transaction spending the same funds; at most one of the pair can sit on a branch.
    pub conflicts_with: Option<TxId>,
}

impl Tx {
    /// Kind follows from the endpoints: inter-chain iff `source != dest`.
    pub fn new(id: TxId, source: ChainId, dest: ChainId, payload: Vec<u8>, created_at: Time) -> Self {
        let kind = if source == dest { TxKind::Intra } else { TxKind::Inter };
        Self {
            id,
            kind,
            source,
            dest,
            payload,
            created_at,
            conflicts_with: None,
        }
    }

    pub fn conflicting(mut self, other: TxId) -> Self {
        self.conflicts_with = Some(other);
        self
    }

    pub fn is_inter(&self) -> bool {
        self.kind == TxKind::Inter
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub height: u64,
    pub miner: NodeId,
    pub timestamp: Time,
    pub txs: Vec<Arc<Tx>>,
}

impl Block {
    pub fn genesis(id: BlockId) -> Self {
        Self {
            id,
            parent: None,
            height: 0,
            miner: NodeId(u32::MAX),
            timestamp: 0.0,
            txs: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }
}

/// Block ids carry the chain index in the high bits so they never collide across chains.
pub fn block_id(chain: ChainId, n: u64) -> BlockId {
    BlockId((u64::from(chain.0) << 40) | n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn share_vector_over_one_rejected() {
        let mut spec = ChainSpec::equal_shares(ChainId(0), "A", 2, 10.0);
        spec.shares = vec![0.6, 0.5];
        assert!(matches!(spec.validate(), Err(ChainError::InvalidShares { .. })));
    }

    #[test]
    fn nonpositive_interval_rejected() {
        let spec = ChainSpec::equal_shares(ChainId(0), "A", 2, 0.0);
        assert!(matches!(spec.validate(), Err(ChainError::InvalidInterval { .. })));
    }

    #[test]
    fn kind_follows_endpoints() {
        assert!(Tx::new(TxId(1), ChainId(0), ChainId(1), vec![], 0.0).is_inter());
        assert!(!Tx::new(TxId(2), ChainId(1), ChainId(1), vec![], 0.0).is_inter());
    }

    #[test]
    fn uniform_latency_stays_in_support() {
        use rand::SeedableRng;
        let model = LatencyModel::Uniform { min: 0.1, max: 0.5 };
        let mut rng = StreamRng::seed_from_u64(3);
        for _ in 0..1000 {
            let d = model.sample(&mut rng);
            assert!((0.1..=0.5).contains(&d));
        }
    }
}
