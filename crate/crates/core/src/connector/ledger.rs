use std::collections::{BTreeSet, HashMap, HashSet};

use crate::types::{BlockId, ChainId, Time, TxId};

/// A matured inter-chain transaction as recorded on the connector ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub tx_id: TxId,
    pub source: ChainId,
    pub dest: ChainId,
    pub payload: Vec<u8>,
    pub origin_block: BlockId,
    pub matured_at: Time,
}

/// Replicated commands. Breaker commands gate transfers in log order so every
/// replica agrees on which transfers a halt rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Transfer(TransferRecord),
    Breaker { chain: ChainId, open: bool, episode: u64 },
    /// Appended by a new leader so entries of earlier terms can commit.
    Noop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub seq: u64,
    pub record: TransferRecord,
    pub committed_at: Time,
}

/// Result of applying one command on a replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    /// New ledger entry.
    Committed { seq: u64 },
    /// Same tx id already on the ledger.
    Duplicate { seq: u64 },
    /// Source chain halted by the circuit breaker at this log position.
    Rejected,
    Control,
}

/// Per-replica ledger: committed transfers numbered from 1 without gaps.
#[derive(Debug, Clone, Default)]
pub struct StateMachine {
    records: Vec<TransferRecord>,
    by_tx: HashMap<TxId, u64>,
    halted: BTreeSet<ChainId>,
    controls: HashSet<(ChainId, u64, bool)>,
}

impl StateMachine {
    pub fn apply(&mut self, cmd: &Command) -> Applied {
        match cmd {
            Command::Noop => Applied::Control,
            Command::Breaker { chain, open, episode } => {
                if self.controls.insert((*chain, *episode, *open)) {
                    if *open {
                        self.halted.insert(*chain);
                    } else {
                        self.halted.remove(chain);
                    }
                }
                Applied::Control
            }
            Command::Transfer(rec) => {
                if let Some(seq) = self.by_tx.get(&rec.tx_id) {
                    return Applied::Duplicate { seq: *seq };
                }
                if self.halted.contains(&rec.source) {
                    return Applied::Rejected;
                }
                self.records.push(rec.clone());
                let seq = self.records.len() as u64;
                self.by_tx.insert(rec.tx_id, seq);
                Applied::Committed { seq }
            }
        }
    }

    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TransferRecord] {
        &self.records
    }

    pub fn seq_of(&self, tx: TxId) -> Option<u64> {
        self.by_tx.get(&tx).copied()
    }

    pub fn is_halted(&self, chain: ChainId) -> bool {
        self.halted.contains(&chain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tx: u64, source: u32) -> Command {
        Command::Transfer(TransferRecord {
            tx_id: TxId(tx),
            source: ChainId(source),
            dest: ChainId(9),
            payload: vec![],
            origin_block: BlockId(0),
            matured_at: 0.0,
        })
    }

    #[test]
    fn sequential_and_idempotent() {
        let mut sm = StateMachine::default();
        assert_eq!(sm.apply(&rec(1, 0)), Applied::Committed { seq: 1 });
        assert_eq!(sm.apply(&rec(2, 0)), Applied::Committed { seq: 2 });
        assert_eq!(sm.apply(&rec(1, 0)), Applied::Duplicate { seq: 1 });
        assert_eq!(sm.len(), 2);
    }

    #[test]
    fn breaker_gates_in_log_order() {
        let mut sm = StateMachine::default();
        sm.apply(&Command::Breaker {
            chain: ChainId(0),
            open: true,
            episode: 1,
        });
        assert_eq!(sm.apply(&rec(1, 0)), Applied::Rejected);
        assert_eq!(sm.apply(&rec(2, 1)), Applied::Committed { seq: 1 });
        sm.apply(&Command::Breaker {
            chain: ChainId(0),
            open: false,
            episode: 1,
        });
        assert_eq!(sm.apply(&rec(1, 0)), Applied::Committed { seq: 2 });
    }
}
