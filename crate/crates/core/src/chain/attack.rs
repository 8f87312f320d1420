use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Block, Tx};
use crate::error::ChainError;
use crate::types::{BlockId, ChainId, NodeId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    SelfishMining,
    Eclipse,
    Ddos,
    DoubleSpend,
    CrashSilence,
}

impl AttackKind {
    /// Kinds whose members act as one mining pool on a shared private branch.
    pub fn is_pool(self) -> bool {
        matches!(self, AttackKind::SelfishMining | AttackKind::DoubleSpend)
    }

    /// Kinds whose members deviate from the protocol (as opposed to victims).
    pub fn is_malicious(self) -> bool {
        matches!(
            self,
            AttackKind::SelfishMining | AttackKind::DoubleSpend | AttackKind::Ddos
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::SelfishMining => "selfish-mining",
            AttackKind::Eclipse => "eclipse",
            AttackKind::Ddos => "ddos",
            AttackKind::DoubleSpend => "double-spend",
            AttackKind::CrashSilence => "crash-silence",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Controlled nodes (miners for pool and ddos kinds; any node for crash-silence).
    pub attackers: Vec<NodeId>,
    /// Eclipse targets.
    pub victims: Vec<NodeId>,
    pub start: Time,
    pub stop: Time,
    /// Junk messages per second per emitter.
    pub ddos_rate: f64,
    /// Double-spend: the payment to be reversed, submitted at `start`.
    pub victim_tx: Option<Arc<Tx>>,
    /// Double-spend: the conflicting spend carried by the first private block.
    pub conflict_tx: Option<Arc<Tx>>,
    /// Double-spend: abandon once the public chain leads by this many blocks.
    pub give_up_deficit: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, attackers: Vec<NodeId>, start: Time, stop: Time) -> Self {
        Self {
            kind,
            attackers,
            victims: Vec::new(),
            start,
            stop,
            ddos_rate: 0.0,
            victim_tx: None,
            conflict_tx: None,
            give_up_deficit: 40,
        }
    }

    fn overlaps(&self, other: &AttackSpec) -> bool {
        self.start < other.stop && other.start < self.stop
    }
}

/// Rejects attacker sets shared between attacks whose windows overlap.
pub(crate) fn check_disjoint(chain: ChainId, miners: usize, nodes: usize, attacks: &[AttackSpec]) -> Result<(), ChainError> {
    for a in attacks {
        let limit = if a.kind.is_pool() || a.kind == AttackKind::Ddos { miners } else { nodes };
        for n in a.attackers.iter().chain(&a.victims) {
            if n.index() >= limit {
                return Err(ChainError::UnknownMiner {
                    chain,
                    miner: n.0,
                    count: limit,
                });
            }
        }
    }
    for (i, a) in attacks.iter().enumerate() {
        let mine: BTreeSet<NodeId> = a.attackers.iter().copied().collect();
        for b in &attacks[i + 1..] {
            if !a.overlaps(b) {
                continue;
            }
            if let Some(n) = b.attackers.iter().find(|n| mine.contains(n)) {
                return Err(ChainError::OverlappingAttackers { chain, miner: n.0 });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DoubleSpendOutcome {
    /// Published a strictly longer conflicting branch.
    Succeeded { at: Time },
    GaveUp { at: Time },
    /// Attack window closed mid-race or before the victim was mined.
    Expired { at: Time },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum DsPhase {
    Waiting,
    Racing { origin: BlockId },
    Done(DoubleSpendOutcome),
}

#[derive(Debug, Clone)]
pub(crate) struct AttackState {
    pub spec: AttackSpec,
    pub active: bool,
    pub lead: NodeId,
    pub private: Vec<Arc<Block>>,
    pub private_tip: Option<BlockId>,
    pub private_height: u64,
    pub public_height: u64,
    pub ds: DsPhase,
    pub releases: u64,
}

impl AttackState {
    pub fn new(spec: AttackSpec) -> Self {
        let lead = spec.attackers.first().copied().unwrap_or(NodeId(0));
        Self {
            spec,
            active: false,
            lead,
            private: Vec::new(),
            private_tip: None,
            private_height: 0,
            public_height: 0,
            ds: DsPhase::Waiting,
            releases: 0,
        }
    }

    pub fn withholding(&self) -> bool {
        self.active
            && match self.spec.kind {
                AttackKind::SelfishMining => true,
                AttackKind::DoubleSpend => matches!(self.ds, DsPhase::Racing { .. }),
                _ => false,
            }
    }

    pub fn victim_id(&self) -> Option<crate::types::TxId> {
        self.spec.victim_tx.as_ref().map(|t| t.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_sets_rejected() {
        let a = AttackSpec::new(AttackKind::SelfishMining, vec![NodeId(0), NodeId(1)], 0.0, 100.0);
        let b = AttackSpec::new(AttackKind::Ddos, vec![NodeId(1)], 50.0, 150.0);
        assert!(matches!(
            check_disjoint(ChainId(0), 4, 5, &[a.clone(), b.clone()]),
            Err(ChainError::OverlappingAttackers { miner: 1, .. })
        ));
        let mut later = b;
        later.start = 100.0;
        assert!(check_disjoint(ChainId(0), 4, 5, &[a, later]).is_ok());
    }

    #[test]
    fn unknown_miner_rejected() {
        let a = AttackSpec::new(AttackKind::SelfishMining, vec![NodeId(7)], 0.0, 1.0);
        assert!(check_disjoint(ChainId(0), 4, 5, &[a]).is_err());
    }
}
