use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use super::{Block, Tx};
use crate::types::{BlockId, TxId};

/// Per-node transaction pool tracking what sits on the node's best chain.
///
/// Every transaction keeps the sequence number of its first arrival so a
/// reorg returns pruned transactions to their original FIFO position.
#[derive(Debug, Clone, Default)]
pub struct Mempool {
    queue: BTreeMap<u64, TxId>,
    known: HashMap<TxId, (u64, Arc<Tx>)>,
    pooled: HashSet<TxId>,
    included: HashMap<TxId, BlockId>,
    /// Transactions whose conflicting partner is on the best chain.
    blocked: HashMap<TxId, u32>,
    next_seq: u64,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    pub fn contains(&self, id: TxId) -> bool {
        self.pooled.contains(&id)
    }

    pub fn knows(&self, id: TxId) -> bool {
        self.known.contains_key(&id)
    }

    /// Block on this node's best chain that carries `id`, if any.
    pub fn included_in(&self, id: TxId) -> Option<BlockId> {
        self.included.get(&id).copied()
    }

    /// Returns false for a transaction seen before.
    pub fn add(&mut self, tx: Arc<Tx>) -> bool {
        if self.known.contains_key(&tx.id) {
            return false;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let id = tx.id;
        self.known.insert(id, (seq, tx));
        self.requeue(id);
        true
    }

    fn requeue(&mut self, id: TxId) {
        if self.included.contains_key(&id) || self.blocked.contains_key(&id) || self.pooled.contains(&id) {
            return;
        }
        if let Some((seq, _)) = self.known.get(&id) {
            self.queue.insert(*seq, id);
            self.pooled.insert(id);
        }
    }

    fn unqueue(&mut self, id: TxId) {
        if self.pooled.remove(&id) {
            let seq = self.known[&id].0;
            self.queue.remove(&seq);
        }
    }

    /// First `capacity` pooled transactions in arrival order, skipping `exclude`.
    pub fn select(&self, capacity: usize, mut exclude: impl FnMut(&Tx) -> bool) -> Vec<Arc<Tx>> {
        let mut picked: Vec<Arc<Tx>> = Vec::new();
        for id in self.queue.values() {
            if picked.len() >= capacity {
                break;
            }
            let tx = &self.known[id].1;
            if exclude(tx) {
                continue;
            }
            // never place both halves of a conflicting pair in one block
            if let Some(other) = tx.conflicts_with {
                if picked.iter().any(|p| p.id == other) {
                    continue;
                }
            }
            if picked.iter().any(|p| p.conflicts_with == Some(tx.id)) {
                continue;
            }
            picked.push(tx.clone());
        }
        picked
    }

    /// Applies a best-chain change: pruned blocks first (descending), then added ones.
    pub fn apply_reorg(&mut self, pruned: &[Arc<Block>], extended: &[Arc<Block>]) {
        for b in pruned {
            for tx in &b.txs {
                self.included.remove(&tx.id);
                if let Some(other) = tx.conflicts_with {
                    self.unblock(other);
                }
            }
        }
        for b in extended {
            for tx in &b.txs {
                if !self.known.contains_key(&tx.id) {
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    self.known.insert(tx.id, (seq, tx.clone()));
                }
                self.unqueue(tx.id);
                self.included.insert(tx.id, b.id);
                if let Some(other) = tx.conflicts_with {
                    self.unqueue(other);
                    *self.blocked.entry(other).or_insert(0) += 1;
                }
            }
        }
        for b in pruned {
            for tx in &b.txs {
                self.requeue(tx.id);
            }
        }
    }

    fn unblock(&mut self, id: TxId) {
        if let Some(n) = self.blocked.get_mut(&id) {
            *n -= 1;
            if *n == 0 {
                self.blocked.remove(&id);
                self.requeue(id);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ChainId, NodeId};

    fn tx(id: u64) -> Arc<Tx> {
        Arc::new(Tx::new(TxId(id), ChainId(0), ChainId(1), vec![], 0.0))
    }

    fn block(id: u64, txs: Vec<Arc<Tx>>) -> Arc<Block> {
        Arc::new(Block {
            id: BlockId(id),
            parent: Some(BlockId(0)),
            height: 1,
            miner: NodeId(0),
            timestamp: 0.0,
            txs,
        })
    }

    #[test]
    fn fifo_capacity() {
        let mut m = Mempool::new();
        for i in 0..1000 {
            assert!(m.add(tx(i)));
        }
        let first = m.select(100, |_| false);
        assert_eq!(first.len(), 100);
        assert_eq!(first[0].id, TxId(0));
        assert_eq!(first[99].id, TxId(99));
        m.apply_reorg(&[], &[block(1, first)]);
        assert_eq!(m.len(), 900);
        assert_eq!(m.select(1, |_| false)[0].id, TxId(100));
    }

    #[test]
    fn duplicate_add_ignored() {
        let mut m = Mempool::new();
        assert!(m.add(tx(1)));
        assert!(!m.add(tx(1)));
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn pruned_txs_return_in_order() {
        let mut m = Mempool::new();
        for i in 0..3 {
            m.add(tx(i));
        }
        let b = block(1, vec![tx(0), tx(2)]);
        m.apply_reorg(&[], &[b.clone()]);
        assert_eq!(m.len(), 1);
        // new branch keeps tx 2 only
        let b2 = block(2, vec![tx(2)]);
        m.apply_reorg(&[b], &[b2]);
        let ids: Vec<_> = m.select(10, |_| false).iter().map(|t| t.id.0).collect();
        assert_eq!(ids, vec![0, 1]);
        assert_eq!(m.included_in(TxId(2)), Some(BlockId(2)));
        assert_eq!(m.included_in(TxId(0)), None);
    }

    #[test]
    fn conflicting_tx_blocks_partner() {
        let mut m = Mempool::new();
        let victim = tx(1);
        m.add(victim.clone());
        let spend = Arc::new(Tx::new(TxId(2), ChainId(0), ChainId(0), vec![], 0.0).conflicting(TxId(1)));
        let b = block(5, vec![spend]);
        m.apply_reorg(&[], &[b.clone()]);
        assert!(!m.contains(TxId(1)));
        m.apply_reorg(&[b], &[]);
        assert!(m.contains(TxId(1)));
        assert!(m.contains(TxId(2)));
        // both pooled, but a single block never takes both
        assert_eq!(m.select(10, |_| false).len(), 1);
    }
}
