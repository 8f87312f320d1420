//! Relay nodes: the inter-connector's observers of one chain each.
//!
//! A relay node watches its chain's best chain for outbound inter-chain
//! transactions, holds each one until its origin block is buried under the
//! depth required by the finality table, hands matured transfers to the
//! connector, and injects ledger entries addressed to its chain.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockStore, InsertOutcome, Tx};
use crate::connector::{LedgerEntry, TransferRecord};
use crate::error::InvariantViolation;
use crate::finality::FinalityTimeTable;
use crate::kernel::StreamRng;
use crate::types::{BlockId, ChainId, NodeId, Time, TxId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayConfig {
    /// Best-chain blocks in the block-interval estimate.
    pub stats_window: usize,
    pub stats_period: f64,
    pub poll_interval: f64,
    /// Silence after a submission before retrying.
    pub submit_timeout: f64,
    pub backoff_base: f64,
    pub backoff_cap: f64,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            stats_window: 100,
            stats_period: 10.0,
            poll_interval: 1.0,
            submit_timeout: 2.0,
            backoff_base: 1.0,
            backoff_cap: 30.0,
        }
    }
}

impl RelayConfig {
    /// Exponential backoff with jitter in `[d/2, d]`, `d = min(cap, base 2^attempt)`.
    pub fn backoff(&self, attempt: u32, rng: &mut StreamRng) -> f64 {
        let d = (self.backoff_base * 2f64.powi(attempt.min(30) as i32)).min(self.backoff_cap);
        d * rng.gen_range(0.5..=1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferState {
    Observed,
    Matured,
    Submitted,
    Committed,
    Delivered,
    Dropped,
}

impl TransferState {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferState::Observed => "observed",
            TransferState::Matured => "matured",
            TransferState::Submitted => "submitted",
            TransferState::Committed => "committed",
            TransferState::Delivered => "delivered",
            TransferState::Dropped => "dropped",
        }
    }

    /// Legal state-machine edges. `Observed -> Observed` is a reorg reset.
    pub fn may_become(self, to: TransferState) -> bool {
        use TransferState::*;
        matches!(
            (self, to),
            (Observed, Observed | Matured | Dropped)
                | (Matured, Submitted | Dropped)
                | (Submitted, Committed | Dropped)
                | (Committed, Delivered)
        )
    }
}

impl fmt::Display for TransferState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An outbound inter-chain transaction tracked by one relay node.
#[derive(Debug, Clone)]
pub struct PendingTransfer {
    pub tx: Arc<Tx>,
    /// `None` while the transaction sits outside the best chain after a reorg.
    pub origin: Option<BlockId>,
    pub state: TransferState,
    pub depth: Option<u64>,
    /// Snapshot from the finality table; `None` until the table has a ready entry.
    pub required_z: Option<u32>,
    pub observed_at: Time,
    pub matured_at: Option<Time>,
    pub seq: Option<u64>,
    pub attempts: u32,
    /// Origin block left the best chain after maturity.
    pub reverted_after_maturity: bool,
}

impl PendingTransfer {
    pub fn record(&self) -> TransferRecord {
        TransferRecord {
            tx_id: self.tx.id,
            source: self.tx.source,
            dest: self.tx.dest,
            payload: self.tx.payload.clone(),
            origin_block: self.origin.expect("matured transfers have an origin"),
            matured_at: self.matured_at.expect("matured transfers have a maturity time"),
        }
    }
}

/// One line of the transfer audit log.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub time: Time,
    pub chain: ChainId,
    pub relay: NodeId,
    pub tx: TxId,
    pub from: Option<TransferState>,
    pub to: TransferState,
    pub depth: Option<u64>,
    pub z: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStats {
    pub chain: ChainId,
    /// Windowed mean best-chain inter-block time; `None` while warming up.
    pub t_hat: Option<f64>,
    pub stale_rate: f64,
    pub best_height: u64,
    /// Messages received per sender since the start of the run.
    pub messages: BTreeMap<NodeId, u64>,
    pub q_est: f64,
    /// Timestamps of the oldest and newest block in the window.
    pub window: (Time, Time),
    /// Mean delay between a block's timestamp and its arrival here. Informational.
    pub traverse_time: Option<f64>,
}

impl NetworkStats {
    pub fn warming_up(&self) -> bool {
        self.t_hat.is_none()
    }
}

/// Mean inter-block time over the last `window` intervals of `timestamps`
/// (best chain, ascending height, genesis included). Needs two blocks.
pub fn windowed_interval(timestamps: &[Time], window: usize) -> Option<f64> {
    if timestamps.len() < 2 || window == 0 {
        return None;
    }
    let n = window.min(timestamps.len() - 1);
    let last = timestamps[timestamps.len() - 1];
    let first = timestamps[timestamps.len() - 1 - n];
    Some((last - first) / n as f64)
}

/// A transfer ready for the connector.
#[derive(Debug, Clone)]
pub struct Submission {
    pub tx: TxId,
    pub record: TransferRecord,
}

pub struct RelayNode {
    pub chain: ChainId,
    pub node: NodeId,
    cfg: RelayConfig,
    transfers: BTreeMap<TxId, PendingTransfer>,
    /// Transfers still in `Observed`.
    observing: BTreeSet<TxId>,
    /// Next ledger seq to read.
    ledger_offset: u64,
    breaker_open: bool,
    alive: bool,
    messages: BTreeMap<NodeId, u64>,
    traverse_sum: f64,
    traverse_n: u64,
}

impl RelayNode {
    pub fn new(chain: ChainId, node: NodeId, cfg: RelayConfig) -> Self {
        Self {
            chain,
            node,
            cfg,
            transfers: BTreeMap::new(),
            observing: BTreeSet::new(),
            ledger_offset: 1,
            breaker_open: false,
            alive: true,
            messages: BTreeMap::new(),
            traverse_sum: 0.0,
            traverse_n: 0,
        }
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Crashed relay nodes keep their state but ignore all inputs.
    pub fn set_alive(&mut self, alive: bool) {
        self.alive = alive;
    }

    pub fn transfers(&self) -> &BTreeMap<TxId, PendingTransfer> {
        &self.transfers
    }

    pub fn transfer(&self, tx: TxId) -> Option<&PendingTransfer> {
        self.transfers.get(&tx)
    }

    pub fn ledger_offset(&self) -> u64 {
        self.ledger_offset
    }

    pub fn breaker_open(&self) -> bool {
        self.breaker_open
    }

    pub fn count_message(&mut self, from: NodeId, count: u64) {
        *self.messages.entry(from).or_default() += count;
    }

    pub fn note_traverse(&mut self, delay: f64) {
        self.traverse_sum += delay;
        self.traverse_n += 1;
    }

    fn transition(&mut self, tx: TxId, to: TransferState, now: Time, log: &mut Vec<Transition>) {
        let t = self.transfers.get_mut(&tx).expect("known transfer");
        let from = t.state;
        debug_assert!(from.may_become(to), "illegal transfer transition {from} -> {to}");
        t.state = to;
        if from == TransferState::Observed && to != TransferState::Observed {
            self.observing.remove(&tx);
        }
        log.push(Transition {
            time: now,
            chain: self.chain,
            relay: self.node,
            tx,
            from: Some(from),
            to,
            depth: t.depth,
            z: t.required_z,
        });
    }

    /// Applies a change of this node's best chain and returns newly matured
    /// transfers, already moved to `Submitted`.
    pub fn on_view(
        &mut self,
        outcome: &InsertOutcome,
        store: &BlockStore,
        table: &FinalityTimeTable,
        now: Time,
        log: &mut Vec<Transition>,
    ) -> Result<Vec<Submission>, InvariantViolation> {
        if !self.alive {
            return Ok(Vec::new());
        }
        for b in &outcome.pruned {
            for tx in &b.txs {
                let Some(t) = self.transfers.get_mut(&tx.id) else { continue };
                if t.origin != Some(b.id) {
                    continue;
                }
                if t.state == TransferState::Observed {
                    t.origin = None;
                    t.depth = None;
                    self.transition(tx.id, TransferState::Observed, now, log);
                } else {
                    t.reverted_after_maturity = true;
                }
            }
        }
        for b in &outcome.extended {
            for tx in &b.txs {
                if !tx.is_inter() || tx.source != self.chain {
                    continue;
                }
                match self.transfers.get_mut(&tx.id) {
                    Some(t) => {
                        if t.origin.is_none() && t.state == TransferState::Observed {
                            t.origin = Some(b.id);
                            t.depth = Some(0);
                            self.transition(tx.id, TransferState::Observed, now, log);
                        } else if t.origin.is_none() || !store.is_on_best_chain(t.origin.unwrap()) {
                            // re-mined after maturity: the new block is its origin now
                            t.origin = Some(b.id);
                            t.reverted_after_maturity = false;
                        }
                    }
                    None => self.observe(tx.clone(), b.id, table, now, log),
                }
            }
        }
        self.refresh(store, table, now, log)
    }

    fn observe(&mut self, tx: Arc<Tx>, origin: BlockId, table: &FinalityTimeTable, now: Time, log: &mut Vec<Transition>) {
        let required_z = table.get(tx.source, tx.dest).and_then(|e| e.confirmations());
        let id = tx.id;
        self.transfers.insert(
            id,
            PendingTransfer {
                tx,
                origin: Some(origin),
                state: TransferState::Observed,
                depth: Some(0),
                required_z,
                observed_at: now,
                matured_at: None,
                seq: None,
                attempts: 0,
                reverted_after_maturity: false,
            },
        );
        self.observing.insert(id);
        log.push(Transition {
            time: now,
            chain: self.chain,
            relay: self.node,
            tx: id,
            from: None,
            to: TransferState::Observed,
            depth: Some(0),
            z: required_z,
        });
        if self.breaker_open {
            self.transition(id, TransferState::Dropped, now, log);
        }
    }

    /// Recomputes depths of observed transfers and matures those deep enough.
    pub fn refresh(
        &mut self,
        store: &BlockStore,
        table: &FinalityTimeTable,
        now: Time,
        log: &mut Vec<Transition>,
    ) -> Result<Vec<Submission>, InvariantViolation> {
        let mut ready = Vec::new();
        for id in self.observing.iter().copied().collect::<Vec<_>>() {
            let t = self.transfers.get_mut(&id).expect("observing is a subset");
            if t.required_z.is_none() {
                t.required_z = table.get(t.tx.source, t.tx.dest).and_then(|e| e.confirmations());
            }
            t.depth = match t.origin {
                Some(o) => store.depth(o).map_err(|e| InvariantViolation::new("relay origin known", e.to_string()))?,
                None => None,
            };
            if let (Some(d), Some(z)) = (t.depth, t.required_z) {
                if d >= u64::from(z) {
                    ready.push(id);
                }
            }
        }
        let mut out = Vec::with_capacity(ready.len());
        for id in ready {
            self.transfers.get_mut(&id).unwrap().matured_at = Some(now);
            self.transition(id, TransferState::Matured, now, log);
            out.push(self.submit(id, store, now, log)?);
        }
        Ok(out)
    }

    fn submit(&mut self, id: TxId, store: &BlockStore, now: Time, log: &mut Vec<Transition>) -> Result<Submission, InvariantViolation> {
        self.check_gate(id, store)?;
        let t = self.transfers.get_mut(&id).unwrap();
        t.attempts += 1;
        let record = t.record();
        self.transition(id, TransferState::Submitted, now, log);
        Ok(Submission { tx: id, record })
    }

    /// Safety gate: origin depth must meet the snapshot at every submission.
    fn check_gate(&self, id: TxId, store: &BlockStore) -> Result<(), InvariantViolation> {
        let t = &self.transfers[&id];
        let depth = t.origin.and_then(|o| store.depth(o).ok().flatten());
        match (depth, t.required_z) {
            (Some(d), Some(z)) if d >= u64::from(z) => Ok(()),
            _ => Err(InvariantViolation::new(
                "safety gate",
                format!(
                    "{} submitted by {}/{} at depth {:?} with required z {:?}",
                    id, self.chain, self.node, depth, t.required_z
                ),
            )),
        }
    }

    /// Decides what to do when a submission went unanswered: `Some(record)`
    /// to resend now, `None` to wait (settled, or origin currently too shallow).
    pub fn retry(&mut self, id: TxId, store: &BlockStore) -> Option<Submission> {
        if !self.alive {
            return None;
        }
        let t = self.transfers.get(&id)?;
        if t.state != TransferState::Submitted {
            return None;
        }
        if self.check_gate(id, store).is_err() {
            return None;
        }
        let t = self.transfers.get_mut(&id).unwrap();
        t.attempts += 1;
        Some(Submission {
            tx: id,
            record: t.record(),
        })
    }

    pub fn attempts(&self, id: TxId) -> u32 {
        self.transfers.get(&id).map_or(0, |t| t.attempts)
    }

    pub fn is_awaiting(&self, id: TxId) -> bool {
        self.alive && self.transfers.get(&id).is_some_and(|t| t.state == TransferState::Submitted)
    }

    pub fn on_committed(&mut self, id: TxId, seq: u64, now: Time, log: &mut Vec<Transition>) {
        if let Some(t) = self.transfers.get_mut(&id) {
            if t.state == TransferState::Submitted {
                t.seq = Some(seq);
                self.transition(id, TransferState::Committed, now, log);
            }
        }
    }

    pub fn on_rejected(&mut self, id: TxId, now: Time, log: &mut Vec<Transition>) {
        if self.transfers.get(&id).is_some_and(|t| t.state == TransferState::Submitted) {
            self.transition(id, TransferState::Dropped, now, log);
        }
    }

    /// Circuit breaker decision for this chain: pending pre-submission
    /// transfers are dropped and new observations are dropped on sight.
    pub fn set_breaker(&mut self, open: bool, now: Time, log: &mut Vec<Transition>) {
        self.breaker_open = open;
        if !open || !self.alive {
            return;
        }
        let doomed: Vec<TxId> = self
            .transfers
            .iter()
            .filter(|(_, t)| matches!(t.state, TransferState::Observed | TransferState::Matured))
            .map(|(id, _)| *id)
            .collect();
        for id in doomed {
            self.transition(id, TransferState::Dropped, now, log);
        }
    }

    /// Consumes ledger entries read from the connector. Source-side entries
    /// confirm our submissions; returns entries addressed to this chain.
    pub fn on_ledger(&mut self, entries: &[LedgerEntry], now: Time, log: &mut Vec<Transition>) -> Vec<LedgerEntry> {
        let mut inbound = Vec::new();
        if !self.alive {
            return inbound;
        }
        for e in entries {
            if e.seq < self.ledger_offset {
                continue;
            }
            self.ledger_offset = e.seq + 1;
            if e.record.source == self.chain {
                self.on_committed(e.record.tx_id, e.seq, now, log);
            }
            if e.record.dest == self.chain {
                inbound.push(e.clone());
            }
        }
        inbound
    }

    /// Records a successful injection into this chain's mempool.
    pub fn log_delivery(&self, entry: &LedgerEntry, now: Time, log: &mut Vec<Transition>) {
        log.push(Transition {
            time: now,
            chain: self.chain,
            relay: self.node,
            tx: entry.record.tx_id,
            from: Some(TransferState::Committed),
            to: TransferState::Delivered,
            depth: None,
            z: None,
        });
    }

    pub fn stats(&self, store: &BlockStore, q_est: f64) -> NetworkStats {
        let best = store.best_chain();
        let start = best.len().saturating_sub(self.cfg.stats_window + 1);
        let stamps: Vec<Time> = best[start..].iter().map(|id| store.get(*id).unwrap().timestamp).collect();
        let t_hat = windowed_interval(&stamps, self.cfg.stats_window);
        NetworkStats {
            chain: self.chain,
            t_hat,
            stale_rate: store.stale_count() as f64 / store.len().max(1) as f64,
            best_height: store.tip_height(),
            messages: self.messages.clone(),
            q_est: q_est.clamp(0.0, 1.0),
            window: (stamps.first().copied().unwrap_or(0.0), stamps.last().copied().unwrap_or(0.0)),
            traverse_time: (self.traverse_n > 0).then(|| self.traverse_sum / self.traverse_n as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Block;
    use crate::finality::{build_table, CatchUpRace, CollaborationPolicy, FinalityInputs};

    const A: ChainId = ChainId(0);
    const B: ChainId = ChainId(1);

    fn table(q: f64) -> FinalityTimeTable {
        let mut stats = BTreeMap::new();
        stats.insert(A, FinalityInputs::new(q, 10.0).unwrap());
        let policies = [CollaborationPolicy {
            source: A,
            dest: B,
            epsilon: 1e-3,
        }];
        build_table(&CatchUpRace, &stats, &policies, 0.0)
    }

    struct Line {
        store: BlockStore,
        next: u64,
    }

    impl Line {
        fn new() -> Self {
            Self {
                store: BlockStore::new(Arc::new(Block::genesis(BlockId(0)))),
                next: 1,
            }
        }

        fn mine_on(&mut self, parent: BlockId, txs: Vec<Arc<Tx>>, t: Time) -> InsertOutcome {
            let p = self.store.get(parent).unwrap().clone();
            let b = Block {
                id: BlockId(self.next),
                parent: Some(parent),
                height: p.height + 1,
                miner: NodeId(0),
                timestamp: t,
                txs,
            };
            self.next += 1;
            self.store.insert(Arc::new(b), t).unwrap()
        }

        fn mine(&mut self, txs: Vec<Arc<Tx>>, t: Time) -> InsertOutcome {
            let tip = self.store.tip();
            self.mine_on(tip, txs, t)
        }
    }

    fn inter(id: u64) -> Arc<Tx> {
        Arc::new(Tx::new(TxId(id), A, B, vec![], 0.0))
    }

    #[test]
    fn observes_inter_chain_txs_with_table_depth() {
        let mut r = RelayNode::new(A, NodeId(9), RelayConfig::default());
        let mut line = Line::new();
        let mut log = Vec::new();
        let intra = Arc::new(Tx::new(TxId(3), A, A, vec![], 0.0));
        let out = line.mine(vec![inter(1), inter(2), intra], 1.0);
        r.on_view(&out, &line.store, &table(0.1), 1.0, &mut log).unwrap();
        assert_eq!(r.transfers().len(), 2);
        assert!(r.transfers().values().all(|t| t.required_z == Some(5) && t.state == TransferState::Observed));
    }

    #[test]
    fn matures_exactly_at_required_depth() {
        // q=0.3, eps=1e-3 gives a deeper requirement; use q=0 for z=1 and q=0.1 for z=5
        for (q, z) in [(0.0, 1u64), (0.1, 5)] {
            let mut r = RelayNode::new(A, NodeId(9), RelayConfig::default());
            let mut line = Line::new();
            let mut log = Vec::new();
            let t = table(q);
            let out = line.mine(vec![inter(1)], 1.0);
            assert!(r.on_view(&out, &line.store, &t, 1.0, &mut log).unwrap().is_empty());
            for h in 1..=z {
                let out = line.mine(vec![], 1.0 + h as f64);
                let subs = r.on_view(&out, &line.store, &t, 1.0 + h as f64, &mut log).unwrap();
                if h < z {
                    assert!(subs.is_empty(), "depth {h} < z {z} must not submit");
                } else {
                    assert_eq!(subs.len(), 1);
                    assert_eq!(r.transfer(TxId(1)).unwrap().state, TransferState::Submitted);
                }
            }
        }
    }

    #[test]
    fn reorg_resets_observed_transfer() {
        let mut r = RelayNode::new(A, NodeId(9), RelayConfig::default());
        let mut line = Line::new();
        let mut log = Vec::new();
        let t = table(0.1);
        let g = line.store.genesis();
        let out = line.mine(vec![inter(1)], 1.0);
        r.on_view(&out, &line.store, &t, 1.0, &mut log).unwrap();
        // competing branch from genesis overtakes
        let o1 = line.mine_on(g, vec![], 2.0);
        r.on_view(&o1, &line.store, &t, 2.0, &mut log).unwrap();
        let fork_tip = BlockId(line.next - 1);
        let o2 = line.mine_on(fork_tip, vec![], 3.0);
        assert!(o2.is_reorg());
        r.on_view(&o2, &line.store, &t, 3.0, &mut log).unwrap();
        let tr = r.transfer(TxId(1)).unwrap();
        assert_eq!(tr.origin, None);
        assert_eq!(tr.depth, None);
        assert_eq!(tr.state, TransferState::Observed);
        // re-mined on the new branch: depth restarts from zero
        let o3 = line.mine(vec![inter(1)], 4.0);
        r.on_view(&o3, &line.store, &t, 4.0, &mut log).unwrap();
        assert_eq!(r.transfer(TxId(1)).unwrap().depth, Some(0));
        assert!(log.iter().filter(|l| l.to == TransferState::Observed).count() >= 3);
    }

    #[test]
    fn breaker_drops_pending_and_new_observations() {
        let mut r = RelayNode::new(A, NodeId(9), RelayConfig::default());
        let mut line = Line::new();
        let mut log = Vec::new();
        let t = table(0.1);
        let out = line.mine(vec![inter(1)], 1.0);
        r.on_view(&out, &line.store, &t, 1.0, &mut log).unwrap();
        r.set_breaker(true, 2.0, &mut log);
        assert_eq!(r.transfer(TxId(1)).unwrap().state, TransferState::Dropped);
        let out = line.mine(vec![inter(2)], 3.0);
        r.on_view(&out, &line.store, &t, 3.0, &mut log).unwrap();
        assert_eq!(r.transfer(TxId(2)).unwrap().state, TransferState::Dropped);
        for _ in 0..10 {
            let out = line.mine(vec![], 4.0);
            assert!(r.on_view(&out, &line.store, &t, 4.0, &mut log).unwrap().is_empty());
        }
    }

    #[test]
    fn ledger_routing_by_destination() {
        let mut rb = RelayNode::new(B, NodeId(9), RelayConfig::default());
        let mut log = Vec::new();
        let entry = |seq, dest| LedgerEntry {
            seq,
            record: TransferRecord {
                tx_id: TxId(seq),
                source: A,
                dest,
                payload: vec![],
                origin_block: BlockId(1),
                matured_at: 0.0,
            },
            committed_at: 0.0,
        };
        let got = rb.on_ledger(&[entry(1, B), entry(2, ChainId(2)), entry(3, B)], 1.0, &mut log);
        assert_eq!(got.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(rb.ledger_offset(), 4);
        assert!(rb.on_ledger(&[entry(3, B)], 2.0, &mut log).is_empty());
    }

    #[test]
    fn interval_estimate() {
        assert_eq!(windowed_interval(&[0.0, 10.0, 20.0], 100), Some(10.0));
        assert_eq!(windowed_interval(&[0.0], 100), None);
        assert_eq!(windowed_interval(&[0.0, 1.0, 5.0, 9.0], 2), Some(4.0));
    }

    #[test]
    fn transition_table() {
        use TransferState::*;
        assert!(Observed.may_become(Observed));
        assert!(Matured.may_become(Submitted));
        assert!(!Matured.may_become(Observed));
        assert!(!Observed.may_become(Submitted));
        assert!(!Delivered.may_become(Dropped));
    }

    #[test]
    fn backoff_is_capped() {
        let cfg = RelayConfig::default();
        let mut rng = crate::kernel::RngStreams::new(1);
        let rng = rng.stream("x");
        for a in 0..40 {
            let d = cfg.backoff(a, rng);
            assert!(d <= cfg.backoff_cap && d >= 0.5 * (cfg.backoff_base * 2f64.powi(a as i32)).min(cfg.backoff_cap));
        }
    }
}
