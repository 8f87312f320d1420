use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::attack::{check_disjoint, AttackState, DsPhase};
use super::{block_id, AttackKind, AttackSpec, Block, BlockStore, ChainSpec, DoubleSpendOutcome, InsertOutcome, Mempool, Tx};
use crate::error::ChainError;
use crate::kernel::Context;
use crate::types::{BlockId, NodeId, Time, TxId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole {
    Miner,
    Relay,
}

#[derive(Debug, Clone)]
pub struct ChainNode {
    pub id: NodeId,
    pub role: NodeRole,
    pub share: f64,
    pub store: BlockStore,
    pub mempool: Mempool,
    /// False for crashed relay nodes.
    pub alive: bool,
    /// Crash-silenced: no mining, no gossip, no heartbeat replies.
    pub silenced: bool,
    pub eclipsed: bool,
    /// New blocks received from other nodes.
    pub inbound_blocks: u64,
    pub mined: u64,
}

impl ChainNode {
    pub fn responsive(&self) -> bool {
        self.alive && !self.silenced
    }
}

#[derive(Debug, Clone)]
pub enum ChainEvent {
    Mine { miner: NodeId },
    DeliverBlock { to: NodeId, from: NodeId, block: Arc<Block> },
    DeliverTx { to: NodeId, from: NodeId, tx: Arc<Tx> },
    Ping { to: NodeId, monitor: NodeId, sent_at: Time },
    Pong { monitor: NodeId, from: NodeId, sent_at: Time, inbound_blocks: u64 },
    Junk { to: NodeId, from: NodeId, count: u32 },
    /// `requester` holds an orphan and asks `to` for the missing ancestor.
    Fetch { to: NodeId, requester: NodeId, id: BlockId },
    DdosTick { attack: usize },
    AttackStart { attack: usize },
    AttackStop { attack: usize },
}

/// Something a relay node received from the network.
#[derive(Debug, Clone)]
pub enum Received {
    Block(Arc<Block>),
    Tx(Arc<Tx>),
    Pong { sent_at: Time, inbound_blocks: u64 },
    Junk(u32),
}

/// Observations surfaced to the rest of the simulation.
#[derive(Debug, Clone)]
pub enum ChainNotice {
    AtRelay { relay: NodeId, from: NodeId, item: Received },
    /// A relay node's store accepted new blocks; may carry a reorg.
    RelayView { relay: NodeId, outcome: InsertOutcome },
    Mined { block: Arc<Block>, withheld: bool },
    Released { attack: usize, blocks: usize },
    DoubleSpend { attack: usize, outcome: DoubleSpendOutcome },
}

struct Labels {
    miners: Vec<String>,
    gossip: String,
    entry: String,
}

pub struct Chain {
    spec: ChainSpec,
    nodes: Vec<ChainNode>,
    labels: Labels,
    next_block: u64,
    submitted: HashSet<TxId>,
    attacks: Vec<AttackState>,
    /// Active pool or ddos attack per node.
    controlled_by: Vec<Option<usize>>,
    blacklist: BTreeMap<NodeId, Time>,
    mined_total: u64,
    all_blocks: Vec<Arc<Block>>,
}

impl Chain {
    /// Validates the spec, creates genesis in every node's store and schedules
    /// the first mining event of each miner plus all attack windows.
    pub fn spawn<C: Context<ChainEvent>>(spec: ChainSpec, attacks: Vec<AttackSpec>, ctx: &mut C) -> Result<Self, ChainError> {
        spec.validate()?;
        check_disjoint(spec.id, spec.miners(), spec.node_count(), &attacks)?;
        let genesis = Arc::new(Block::genesis(block_id(spec.id, 0)));
        let nodes = (0..spec.node_count())
            .map(|i| {
                let miner = i < spec.miners();
                ChainNode {
                    id: NodeId(i as u32),
                    role: if miner { NodeRole::Miner } else { NodeRole::Relay },
                    share: if miner { spec.shares[i] } else { 0.0 },
                    store: BlockStore::new(genesis.clone()),
                    mempool: Mempool::new(),
                    alive: true,
                    silenced: false,
                    eclipsed: false,
                    inbound_blocks: 0,
                    mined: 0,
                }
            })
            .collect();
        let c = spec.id.0;
        let labels = Labels {
            miners: (0..spec.miners()).map(|m| format!("chain{c}.miner{m}")).collect(),
            gossip: format!("chain{c}.gossip"),
            entry: format!("chain{c}.entry"),
        };
        let node_count = spec.node_count();
        let mut chain = Self {
            spec,
            nodes,
            labels,
            next_block: 1,
            submitted: HashSet::new(),
            attacks: attacks.into_iter().map(AttackState::new).collect(),
            controlled_by: vec![None; node_count],
            blacklist: BTreeMap::new(),
            mined_total: 0,
            all_blocks: vec![genesis],
        };
        for m in 0..chain.spec.miners() {
            chain.schedule_mining(NodeId(m as u32), ctx);
        }
        for (i, a) in chain.attacks.iter().enumerate() {
            let now = ctx.now();
            ctx.schedule_in(a.spec.start - now, ChainEvent::AttackStart { attack: i });
            if a.spec.stop.is_finite() {
                ctx.schedule_in(a.spec.stop - now, ChainEvent::AttackStop { attack: i });
            }
        }
        Ok(chain)
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[ChainNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &ChainNode {
        &self.nodes[id.index()]
    }

    pub fn relay_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (self.spec.miners()..self.nodes.len()).map(|i| NodeId(i as u32))
    }

    pub fn miner_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.spec.miners()).map(|i| NodeId(i as u32))
    }

    pub fn mined_total(&self) -> u64 {
        self.mined_total
    }

    /// Every block mined in the run (published or not), genesis first.
    pub fn all_blocks(&self) -> &[Arc<Block>] {
        &self.all_blocks
    }

    pub fn blacklisted(&self) -> &BTreeMap<NodeId, Time> {
        &self.blacklist
    }

    pub fn double_spend_outcome(&self, attack: usize) -> Option<DoubleSpendOutcome> {
        match self.attacks.get(attack)?.ds {
            DsPhase::Done(o) => Some(o),
            _ => None,
        }
    }

    pub fn attack_specs(&self) -> impl Iterator<Item = &AttackSpec> {
        self.attacks.iter().map(|a| &a.spec)
    }

    pub fn is_delivered(&self, tx: TxId) -> bool {
        self.submitted.contains(&tx)
    }

    fn is_honest(&self, node: NodeId) -> bool {
        match self.controlled_by[node.index()] {
            Some(a) => !self.attacks[a].spec.kind.is_malicious(),
            None => true,
        }
    }

    fn schedule_mining<C: Context<ChainEvent>>(&mut self, miner: NodeId, ctx: &mut C) {
        let share = self.nodes[miner.index()].share;
        if share <= 0.0 {
            return;
        }
        let rate = share / self.spec.block_interval;
        let dt = Exp::new(rate).expect("positive rate").sample(ctx.rng(&self.labels.miners[miner.index()]));
        ctx.schedule_in(dt, ChainEvent::Mine { miner });
    }

    pub fn handle<C: Context<ChainEvent>>(&mut self, ev: ChainEvent, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        match ev {
            ChainEvent::Mine { miner } => self.on_mine(miner, ctx, out),
            ChainEvent::DeliverBlock { to, from, block } => self.on_block(to, from, block, ctx, out),
            ChainEvent::DeliverTx { to, from, tx } => self.on_tx(to, from, tx, out),
            ChainEvent::Ping { to, monitor, sent_at } => {
                let n = &self.nodes[to.index()];
                if n.responsive() {
                    let inbound_blocks = n.inbound_blocks;
                    let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
                    ctx.schedule_in(
                        d,
                        ChainEvent::Pong {
                            monitor,
                            from: to,
                            sent_at,
                            inbound_blocks,
                        },
                    );
                }
            }
            ChainEvent::Pong {
                monitor,
                from,
                sent_at,
                inbound_blocks,
            } => {
                if self.nodes[monitor.index()].responsive() && !self.blacklist.contains_key(&from) {
                    out.push(ChainNotice::AtRelay {
                        relay: monitor,
                        from,
                        item: Received::Pong { sent_at, inbound_blocks },
                    });
                }
            }
            ChainEvent::Junk { to, from, count } => {
                if self.nodes[to.index()].responsive() && !self.blacklist.contains_key(&from) {
                    out.push(ChainNotice::AtRelay {
                        relay: to,
                        from,
                        item: Received::Junk(count),
                    });
                }
            }
            ChainEvent::Fetch { to, requester, id } => {
                let n = &self.nodes[to.index()];
                if !n.responsive() {
                    return;
                }
                if let Some(block) = n.store.get(id).cloned() {
                    let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
                    ctx.schedule_in(
                        d,
                        ChainEvent::DeliverBlock {
                            to: requester,
                            from: to,
                            block,
                        },
                    );
                }
            }
            ChainEvent::DdosTick { attack } => self.on_ddos_tick(attack, ctx),
            ChainEvent::AttackStart { attack } => self.start_attack(attack, ctx),
            ChainEvent::AttackStop { attack } => self.stop_attack(attack, ctx, out),
        }
    }

    fn on_mine<C: Context<ChainEvent>>(&mut self, miner: NodeId, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        if !self.nodes[miner.index()].responsive() {
            return;
        }
        self.schedule_mining(miner, ctx);
        match self.controlled_by[miner.index()] {
            Some(a) if self.attacks[a].spec.kind.is_pool() => self.pool_mine(a, miner, ctx, out),
            _ => self.honest_mine(miner, None, ctx, out),
        }
    }

    fn next_block_id(&mut self) -> BlockId {
        let id = block_id(self.spec.id, self.next_block);
        self.next_block += 1;
        id
    }

    fn honest_mine<C: Context<ChainEvent>>(&mut self, miner: NodeId, exclude: Option<TxId>, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let now = ctx.now();
        let node = &self.nodes[miner.index()];
        let parent = node.store.tip_block().clone();
        let txs = node.mempool.select(self.spec.block_capacity, |t| Some(t.id) == exclude);
        let id = self.next_block_id();
        let block = Arc::new(Block {
            id,
            parent: Some(parent.id),
            height: parent.height + 1,
            miner,
            timestamp: now.max(parent.timestamp),
            txs,
        });
        self.record_mined(miner, &block, false, out);
        self.accept(miner, block.clone(), now, out);
        self.gossip_block(miner, block, ctx);
    }

    fn record_mined(&mut self, miner: NodeId, block: &Arc<Block>, withheld: bool, out: &mut Vec<ChainNotice>) {
        self.nodes[miner.index()].mined += 1;
        self.mined_total += 1;
        self.all_blocks.push(block.clone());
        out.push(ChainNotice::Mined {
            block: block.clone(),
            withheld,
        });
    }

    /// Inserts into one node's store and keeps its mempool in step.
    fn accept(&mut self, at: NodeId, block: Arc<Block>, now: Time, out: &mut Vec<ChainNotice>) -> InsertOutcome {
        let node = &mut self.nodes[at.index()];
        let outcome = match node.store.insert(block, now) {
            Ok(o) => o,
            // generated blocks are always well formed
            Err(e) => panic!("invalid block produced by simulation: {e}"),
        };
        if outcome.tip_changed() {
            node.mempool.apply_reorg(&outcome.pruned, &outcome.extended);
        }
        if node.role == NodeRole::Relay && !outcome.stored.is_empty() {
            out.push(ChainNotice::RelayView {
                relay: at,
                outcome: outcome.clone(),
            });
        }
        outcome
    }

    /// Schedules delivery of `block` from `origin` to every other node.
    pub fn gossip_block<C: Context<ChainEvent>>(&mut self, origin: NodeId, block: Arc<Block>, ctx: &mut C) {
        for to in 0..self.nodes.len() {
            if to == origin.index() {
                continue;
            }
            let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
            ctx.schedule_in(
                d,
                ChainEvent::DeliverBlock {
                    to: NodeId(to as u32),
                    from: origin,
                    block: block.clone(),
                },
            );
        }
    }

    pub fn gossip_tx<C: Context<ChainEvent>>(&mut self, origin: NodeId, tx: Arc<Tx>, ctx: &mut C) {
        for to in 0..self.nodes.len() {
            if to == origin.index() {
                continue;
            }
            let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
            ctx.schedule_in(
                d,
                ChainEvent::DeliverTx {
                    to: NodeId(to as u32),
                    from: origin,
                    tx: tx.clone(),
                },
            );
        }
    }

    fn rejects(&self, receiver: NodeId, from: NodeId, block: Option<&Block>) -> bool {
        if self.blacklist.is_empty() || !self.is_honest(receiver) {
            return false;
        }
        if self.blacklist.contains_key(&from) {
            return true;
        }
        match block {
            Some(b) => matches!(self.blacklist.get(&b.miner), Some(t) if b.timestamp >= *t),
            None => false,
        }
    }

    fn on_block<C: Context<ChainEvent>>(&mut self, to: NodeId, from: NodeId, block: Arc<Block>, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let n = &self.nodes[to.index()];
        if !n.responsive() || n.eclipsed || self.rejects(to, from, Some(&block)) {
            return;
        }
        let is_relay = n.role == NodeRole::Relay;
        if is_relay {
            out.push(ChainNotice::AtRelay {
                relay: to,
                from,
                item: Received::Block(block.clone()),
            });
        }
        let now = ctx.now();
        let parent = block.parent;
        let outcome = self.accept(to, block, now, out);
        if outcome.duplicate {
            return;
        }
        if outcome.orphaned {
            if let Some(id) = parent {
                let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
                ctx.schedule_in(d, ChainEvent::Fetch { to: from, requester: to, id });
            }
        }
        self.nodes[to.index()].inbound_blocks += 1;
        if let Some(a) = self.controlled_by[to.index()] {
            if self.attacks[a].lead == to && self.attacks[a].spec.kind.is_pool() {
                self.pool_on_public(a, &outcome, ctx, out);
            }
        }
    }

    fn on_tx(&mut self, to: NodeId, from: NodeId, tx: Arc<Tx>, out: &mut Vec<ChainNotice>) {
        let n = &self.nodes[to.index()];
        if !n.responsive() || n.eclipsed || self.rejects(to, from, None) {
            return;
        }
        if n.role == NodeRole::Relay {
            out.push(ChainNotice::AtRelay {
                relay: to,
                from,
                item: Received::Tx(tx.clone()),
            });
        }
        self.nodes[to.index()].mempool.add(tx);
    }

    /// Injects a transaction through `entry` (a random honest miner when `None`).
    ///
    /// Duplicate ids are rejected; this is the dedup point for deliveries
    /// raced by sibling relay nodes.
    pub fn submit_tx<C: Context<ChainEvent>>(&mut self, tx: Arc<Tx>, entry: Option<NodeId>, ctx: &mut C) -> Result<(), ChainError> {
        if !self.submitted.insert(tx.id) {
            return Err(ChainError::DuplicateTx(tx.id));
        }
        let entry = match entry {
            Some(e) => e,
            None => {
                let candidates: Vec<NodeId> = self
                    .miner_ids()
                    .filter(|m| self.nodes[m.index()].responsive() && self.controlled_by[m.index()].is_none())
                    .collect();
                if candidates.is_empty() {
                    NodeId(0)
                } else {
                    let i = ctx.rng(&self.labels.entry).gen_range(0..candidates.len());
                    candidates[i]
                }
            }
        };
        self.nodes[entry.index()].mempool.add(tx.clone());
        self.gossip_tx(entry, tx, ctx);
        Ok(())
    }

    /// Heartbeat probe from a relay monitor to every miner that is not
    /// blacklisted. Returns the probed miners.
    pub fn ping_miners<C: Context<ChainEvent>>(&mut self, monitor: NodeId, ctx: &mut C) -> Vec<NodeId> {
        let now = ctx.now();
        let mut probed = Vec::new();
        for m in 0..self.spec.miners() {
            if self.blacklist.contains_key(&NodeId(m as u32)) {
                continue;
            }
            probed.push(NodeId(m as u32));
            let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
            ctx.schedule_in(
                d,
                ChainEvent::Ping {
                    to: NodeId(m as u32),
                    monitor,
                    sent_at: now,
                },
            );
        }
        probed
    }

    /// Honest nodes drop future traffic from `nodes` and ignore their new blocks.
    pub fn blacklist(&mut self, nodes: impl IntoIterator<Item = NodeId>, now: Time) {
        for n in nodes {
            self.blacklist.entry(n).or_insert(now);
        }
    }

    pub fn unblacklist(&mut self, nodes: impl IntoIterator<Item = NodeId>) {
        for n in nodes {
            self.blacklist.remove(&n);
        }
    }

    pub fn crash_node(&mut self, node: NodeId) {
        self.nodes[node.index()].alive = false;
    }

    pub fn recover_node<C: Context<ChainEvent>>(&mut self, node: NodeId, ctx: &mut C) {
        let was_down = !self.nodes[node.index()].responsive();
        self.nodes[node.index()].alive = true;
        if was_down && self.nodes[node.index()].responsive() && self.nodes[node.index()].role == NodeRole::Miner {
            self.schedule_mining(node, ctx);
        }
    }

    fn start_attack<C: Context<ChainEvent>>(&mut self, a: usize, ctx: &mut C) {
        let kind = self.attacks[a].spec.kind;
        self.attacks[a].active = true;
        let attackers = self.attacks[a].spec.attackers.clone();
        match kind {
            AttackKind::Eclipse => {
                for v in self.attacks[a].spec.victims.clone() {
                    self.nodes[v.index()].eclipsed = true;
                }
            }
            AttackKind::CrashSilence => {
                for n in attackers {
                    self.nodes[n.index()].silenced = true;
                }
            }
            AttackKind::Ddos => {
                for n in attackers {
                    self.controlled_by[n.index()] = Some(a);
                }
                ctx.schedule_in(0.0, ChainEvent::DdosTick { attack: a });
            }
            AttackKind::SelfishMining | AttackKind::DoubleSpend => {
                for n in attackers {
                    self.controlled_by[n.index()] = Some(a);
                }
                let lead = self.attacks[a].lead;
                let h = self.nodes[lead.index()].store.tip_height();
                self.attacks[a].public_height = h;
                if let Some(victim) = self.attacks[a].spec.victim_tx.clone() {
                    // the payment the attacker will try to reverse
                    let _ = self.submit_tx(victim, None, ctx);
                }
            }
        }
    }

    fn stop_attack<C: Context<ChainEvent>>(&mut self, a: usize, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let now = ctx.now();
        let st = &mut self.attacks[a];
        if !st.active {
            return;
        }
        st.active = false;
        st.private.clear();
        st.private_tip = None;
        if st.spec.kind == AttackKind::DoubleSpend && !matches!(st.ds, DsPhase::Done(_)) {
            let outcome = DoubleSpendOutcome::Expired { at: now };
            st.ds = DsPhase::Done(outcome);
            out.push(ChainNotice::DoubleSpend { attack: a, outcome });
        }
        let spec = st.spec.clone();
        match spec.kind {
            AttackKind::Eclipse => {
                for v in spec.victims {
                    self.nodes[v.index()].eclipsed = false;
                }
            }
            AttackKind::CrashSilence => {
                for n in spec.attackers {
                    self.nodes[n.index()].silenced = false;
                    if self.nodes[n.index()].responsive() && self.nodes[n.index()].role == NodeRole::Miner {
                        self.schedule_mining(n, ctx);
                    }
                }
            }
            _ => {
                for n in spec.attackers {
                    if self.controlled_by[n.index()] == Some(a) {
                        self.controlled_by[n.index()] = None;
                    }
                }
            }
        }
    }

    fn on_ddos_tick<C: Context<ChainEvent>>(&mut self, a: usize, ctx: &mut C) {
        if !self.attacks[a].active {
            return;
        }
        let count = self.attacks[a].spec.ddos_rate.round().max(0.0) as u32;
        let relays: Vec<NodeId> = self.relay_nodes().collect();
        for from in self.attacks[a].spec.attackers.clone() {
            if !self.nodes[from.index()].responsive() {
                continue;
            }
            for &to in &relays {
                let d = self.spec.latency.sample(ctx.rng(&self.labels.gossip));
                ctx.schedule_in(d, ChainEvent::Junk { to, from, count });
            }
        }
        ctx.schedule_in(1.0, ChainEvent::DdosTick { attack: a });
    }

    fn pool_mine<C: Context<ChainEvent>>(&mut self, a: usize, miner: NodeId, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let st = &self.attacks[a];
        if !st.withholding() {
            let exclude = st.victim_id();
            return self.honest_mine(miner, exclude, ctx, out);
        }
        let now = ctx.now();
        let lead = st.lead;
        let store = &self.nodes[lead.index()].store;
        let parent_id = st.private_tip.unwrap_or_else(|| store.tip());
        let parent = store.get(parent_id).expect("private tip known to lead").clone();
        let victim = st.victim_id();
        let on_branch: HashSet<TxId> = st.private.iter().flat_map(|b| b.txs.iter().map(|t| t.id)).collect();
        let mut txs = Vec::new();
        let mut capacity = self.spec.block_capacity;
        if st.spec.kind == AttackKind::DoubleSpend && st.private.is_empty() {
            if let Some(c) = &st.spec.conflict_tx {
                txs.push(c.clone());
                capacity -= 1;
            }
        }
        let conflict = st.spec.conflict_tx.as_ref().map(|c| c.id);
        txs.extend(
            self.nodes[lead.index()]
                .mempool
                .select(capacity, |t| Some(t.id) == victim || Some(t.id) == conflict || on_branch.contains(&t.id)),
        );
        let id = self.next_block_id();
        let block = Arc::new(Block {
            id,
            parent: Some(parent.id),
            height: parent.height + 1,
            miner,
            timestamp: now.max(parent.timestamp),
            txs,
        });
        self.record_mined(miner, &block, true, out);
        self.accept(lead, block.clone(), now, out);
        let st = &mut self.attacks[a];
        st.private_height = block.height;
        st.private_tip = Some(block.id);
        st.private.push(block);
        if st.spec.kind == AttackKind::DoubleSpend {
            self.double_spend_step(a, ctx, out);
        }
    }

    fn pool_on_public<C: Context<ChainEvent>>(&mut self, a: usize, outcome: &InsertOutcome, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let own: HashSet<BlockId> = self.attacks[a].private.iter().map(|b| b.id).collect();
        let st = &mut self.attacks[a];
        for b in &outcome.stored {
            if !own.contains(&b.id) {
                st.public_height = st.public_height.max(b.height);
            }
        }
        if !st.active {
            return;
        }
        match st.spec.kind {
            AttackKind::SelfishMining => {
                if st.private.is_empty() {
                    return;
                }
                if st.private_height < st.public_height {
                    st.private.clear();
                    st.private_tip = None;
                } else if st.private_height - st.public_height <= 1 {
                    self.publish(a, ctx, out);
                }
            }
            AttackKind::DoubleSpend => {
                if st.ds == DsPhase::Waiting {
                    let victim = st.victim_id();
                    let origin = outcome
                        .extended
                        .iter()
                        .find(|b| b.txs.iter().any(|t| Some(t.id) == victim));
                    if let Some(origin) = origin {
                        let fork = origin.parent.expect("victim never in genesis");
                        st.ds = DsPhase::Racing { origin: origin.id };
                        st.private_tip = Some(fork);
                        st.private_height = origin.height - 1;
                    }
                }
                self.double_spend_step(a, ctx, out);
            }
            _ => {}
        }
    }

    fn double_spend_step<C: Context<ChainEvent>>(&mut self, a: usize, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let now = ctx.now();
        let st = &mut self.attacks[a];
        if !matches!(st.ds, DsPhase::Racing { .. }) {
            return;
        }
        if !st.private.is_empty() && st.private_height > st.public_height {
            self.publish(a, ctx, out);
            let outcome = DoubleSpendOutcome::Succeeded { at: now };
            self.attacks[a].ds = DsPhase::Done(outcome);
            self.attacks[a].private_tip = None;
            out.push(ChainNotice::DoubleSpend { attack: a, outcome });
        } else if st.public_height >= st.private_height + st.spec.give_up_deficit {
            let outcome = DoubleSpendOutcome::GaveUp { at: now };
            st.ds = DsPhase::Done(outcome);
            st.private.clear();
            st.private_tip = None;
            out.push(ChainNotice::DoubleSpend { attack: a, outcome });
        }
    }

    fn publish<C: Context<ChainEvent>>(&mut self, a: usize, ctx: &mut C, out: &mut Vec<ChainNotice>) {
        let st = &mut self.attacks[a];
        let blocks = std::mem::take(&mut st.private);
        st.private_tip = None;
        st.releases += 1;
        st.public_height = st.public_height.max(st.private_height);
        let lead = st.lead;
        out.push(ChainNotice::Released { attack: a, blocks: blocks.len() });
        for b in blocks {
            self.gossip_block(lead, b, ctx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::LatencyModel;
    use crate::kernel::{Kernel, Mapped};
    use crate::types::ChainId;

    type K = Kernel<ChainEvent>;

    fn run(chain: &mut Chain, k: &mut K, until: f64) -> Vec<ChainNotice> {
        let mut out = Vec::new();
        while let Some(ev) = k.next_event(until) {
            chain.handle(ev.kind, k, &mut out);
        }
        k.advance_to(until).unwrap();
        out
    }

    fn spec(miners: usize, latency: LatencyModel) -> ChainSpec {
        let mut s = ChainSpec::equal_shares(ChainId(0), "A", miners, 10.0);
        s.latency = latency;
        s
    }

    #[test]
    fn single_miner_mean_interval() {
        let mut k = K::new(7);
        let mut c = Chain::spawn(spec(1, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        run(&mut c, &mut k, 100_000.0);
        let mean = 100_000.0 / c.mined_total() as f64;
        assert!((mean - 10.0).abs() < 0.5, "mean interval {mean}");
    }

    #[test]
    fn zero_latency_nodes_converge() {
        let mut k = K::new(11);
        let mut c = Chain::spawn(spec(4, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        let mut t = 0.0;
        while c.mined_total() < 200 {
            t += 1.0;
            run(&mut c, &mut k, t);
            let tip = c.nodes()[0].store.tip();
            assert!(c.nodes().iter().all(|n| n.store.tip() == tip));
        }
    }

    #[test]
    fn duplicate_submit_rejected() {
        let mut k = K::new(1);
        let mut c = Chain::spawn(spec(2, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        let tx = Arc::new(Tx::new(TxId(1), ChainId(0), ChainId(1), vec![], 0.0));
        c.submit_tx(tx.clone(), None, &mut k).unwrap();
        assert!(matches!(c.submit_tx(tx, None, &mut k), Err(ChainError::DuplicateTx(_))));
    }

    #[test]
    fn submitted_tx_gets_mined() {
        let mut k = K::new(2);
        let mut c = Chain::spawn(spec(3, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        let tx = Arc::new(Tx::new(TxId(1), ChainId(0), ChainId(1), vec![], 0.0));
        c.submit_tx(tx, None, &mut k).unwrap();
        run(&mut c, &mut k, 200.0);
        assert!(c.nodes()[0].mempool.included_in(TxId(1)).is_some());
    }

    #[test]
    fn capacity_spreads_over_blocks_fifo() {
        let mut k = K::new(3);
        let mut c = Chain::spawn(spec(1, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        for i in 0..1000 {
            let tx = Arc::new(Tx::new(TxId(i), ChainId(0), ChainId(1), vec![], 0.0));
            c.submit_tx(tx, Some(NodeId(0)), &mut k).unwrap();
        }
        run(&mut c, &mut k, 2000.0);
        let store = &c.nodes()[0].store;
        let mut seen = Vec::new();
        for id in store.best_chain() {
            let b = store.get(*id).unwrap();
            assert!(b.txs.len() <= 100);
            seen.extend(b.txs.iter().map(|t| t.id.0));
        }
        assert_eq!(seen, (0..1000).collect::<Vec<_>>());
        let with_txs = store.best_chain().iter().filter(|id| !store.get(**id).unwrap().txs.is_empty()).count();
        assert!(with_txs >= 10);
    }

    #[test]
    fn uniform_latency_arrivals_within_support() {
        let mut k = K::new(4);
        let mut c = Chain::spawn(spec(12, LatencyModel::Uniform { min: 0.1, max: 0.5 }), vec![], &mut k).unwrap();
        let blk = Arc::new(Block {
            id: BlockId(999),
            parent: Some(c.nodes()[0].store.genesis()),
            height: 1,
            miner: NodeId(0),
            timestamp: 0.0,
            txs: vec![],
        });
        let mut probe = Kernel::<ChainEvent>::new(4);
        c.gossip_block(NodeId(0), blk, &mut Mapped::new(&mut probe, |e| e));
        let mut n = 0;
        while let Some(ev) = probe.next_event(f64::INFINITY) {
            if let ChainEvent::DeliverBlock { .. } = ev.kind {
                assert!((0.1..=0.5).contains(&ev.fire_time));
                n += 1;
            }
        }
        assert_eq!(n, 12);
    }

    #[test]
    fn eclipsed_node_receives_nothing() {
        let mut k = K::new(5);
        let mut atk = AttackSpec::new(AttackKind::Eclipse, vec![], 0.0, f64::INFINITY);
        atk.victims = vec![NodeId(3)];
        let mut c = Chain::spawn(spec(4, LatencyModel::Constant { delay: 0.0 }), vec![atk], &mut k).unwrap();
        run(&mut c, &mut k, 500.0);
        assert_eq!(c.nodes()[3].inbound_blocks, 0);
        assert!(c.nodes()[0].inbound_blocks > 0);
    }

    #[test]
    fn reorg_returns_txs_and_depth_absent() {
        // two miners, partitioned by latency so both build, then merge
        let mut k = K::new(9);
        let mut c = Chain::spawn(spec(2, LatencyModel::Constant { delay: 30.0 }), vec![], &mut k).unwrap();
        let mut out = Vec::new();
        let mut saw_reorg = false;
        while let Some(ev) = k.next_event(5000.0) {
            c.handle(ev.kind, &mut k, &mut out);
            for n in c.nodes() {
                let best: Vec<_> = n.store.best_chain().to_vec();
                for w in best.windows(2) {
                    assert_eq!(n.store.get(w[1]).unwrap().parent, Some(w[0]));
                }
            }
            for node in 0..2 {
                let store = &c.nodes()[node].store;
                if store.stale_count() > 0 {
                    saw_reorg = true;
                    for b in store.blocks() {
                        if !store.is_on_best_chain(b.id) {
                            assert_eq!(store.depth(b.id).unwrap(), None);
                        }
                    }
                }
            }
        }
        assert!(saw_reorg);
    }

    #[test]
    fn crash_silenced_miner_stops() {
        let mut k = K::new(6);
        let atk = AttackSpec::new(AttackKind::CrashSilence, vec![NodeId(0)], 0.0, f64::INFINITY);
        let mut c = Chain::spawn(spec(2, LatencyModel::Constant { delay: 0.0 }), vec![atk], &mut k).unwrap();
        run(&mut c, &mut k, 1000.0);
        assert_eq!(c.nodes()[0].mined, 0);
        assert!(c.nodes()[1].mined > 0);
    }

    #[test]
    fn blacklisted_miner_blocks_ignored() {
        let mut k = K::new(8);
        let mut c = Chain::spawn(spec(2, LatencyModel::Constant { delay: 0.0 }), vec![], &mut k).unwrap();
        c.blacklist([NodeId(1)], 0.0);
        run(&mut c, &mut k, 1000.0);
        let store = &c.nodes()[0].store;
        assert!(store
            .best_chain()
            .iter()
            .skip(1)
            .all(|id| store.get(*id).unwrap().miner == NodeId(0)));
        assert!(c.nodes()[1].mined > 0);
    }

    #[test]
    fn recovered_node_resyncs_missed_blocks() {
        let mut k = K::new(9);
        let mut c = Chain::spawn(spec(3, LatencyModel::Uniform { min: 0.1, max: 0.5 }), vec![], &mut k).unwrap();
        run(&mut c, &mut k, 100.0);
        c.crash_node(NodeId(3));
        run(&mut c, &mut k, 500.0);
        c.recover_node(NodeId(3), &mut k);
        run(&mut c, &mut k, 1000.0);
        let relay = &c.nodes()[3].store;
        let miner = &c.nodes()[0].store;
        assert_eq!(relay.orphan_count(), 0);
        assert!(relay.tip_height() + 1 >= miner.tip_height());
        assert!(relay.tip_height() > 50);
    }
}
