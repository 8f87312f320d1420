//! One simulation: chains, relay nodes, connector, finality service and
//! sentinels driven by a single event queue.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use super::report::{
    BreakerEpisode, ChainMetrics, DoubleSpendRecord, FlagRow, LatencySummary, RunReport, TransferCounts,
};
use super::scenario::{Scenario, ScriptAction};
use crate::chain::{AttackKind, Chain, ChainEvent, ChainNotice, Received, Tx};
use crate::connector::{ClientReply, ClientToken, Command, ConnEvent, ConnOutput, Connector};
use crate::error::{ChainError, Error, InvariantViolation};
use crate::finality::{CatchUpRace, FinalityInputs, FinalityService};
use crate::kernel::{Kernel, Mapped};
use crate::relay::{NetworkStats, RelayNode, Submission, TransferState, Transition};
use crate::sentinel::Sentinel;
use crate::types::{ChainId, NodeId, Time, TxId};

#[derive(Debug, Clone)]
pub enum WorldEvent {
    Chain(ChainId, ChainEvent),
    Conn(ConnEvent),
    /// Connector reply arriving back at the client.
    ConnReply { token: ClientToken, reply: ClientReply },
    Poll { chain: ChainId, relay: usize },
    Stats { chain: ChainId, relay: usize },
    Sweep { chain: ChainId },
    /// Resend a submission unless settled or superseded by a later attempt.
    Retry { chain: ChainId, relay: usize, tx: TxId, attempt: u32 },
    ControlRetry { chain: ChainId },
    Traffic { stream: usize, index: u32 },
    Script(usize),
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Transfer(TxId),
    Breaker,
}

#[derive(Debug, Clone, Copy)]
struct Outstanding {
    chain: ChainId,
    relay: usize,
    pending: Pending,
}

#[derive(Debug, Clone, Copy)]
struct BreakerCmd {
    episode: u64,
    open: bool,
}

struct DoubleSpendPlan {
    chain: ChainId,
    attack: usize,
    dest: ChainId,
    victim: TxId,
    start: Time,
}

struct Slot {
    chain: Chain,
    relays: Vec<RelayNode>,
    /// Connector node each relay talks to.
    hints: Vec<usize>,
    sentinel: Sentinel,
    monitor: Option<usize>,
    stats: Option<NetworkStats>,
    /// Breaker commands not yet applied, in decision order.
    controls: VecDeque<BreakerCmd>,
    nominal_interval: f64,
    floor: f64,
}

impl Slot {
    fn relay_index(&self, node: NodeId) -> usize {
        node.index() - self.chain.spec().miners()
    }

    fn relay_node(&self, r: usize) -> NodeId {
        NodeId((self.chain.spec().miners() + r) as u32)
    }

    fn first_alive_relay(&self) -> Option<usize> {
        self.relays.iter().position(|r| r.is_alive())
    }
}

pub struct World {
    sc: Scenario,
    k: Kernel<WorldEvent>,
    slots: Vec<Slot>,
    conn: Connector,
    finality: FinalityService,
    tokens: BTreeMap<u64, Outstanding>,
    next_token: u64,
    next_tx: u64,
    created: BTreeMap<TxId, Time>,
    transitions: Vec<Transition>,
    flags: Vec<FlagRow>,
    deliveries: BTreeMap<TxId, Time>,
    breakers: Vec<BreakerEpisode>,
    ds: Vec<DoubleSpendPlan>,
    notices: Vec<ChainNotice>,
    conn_out: Vec<ConnOutput>,
}

fn chain_ctx(k: &mut Kernel<WorldEvent>, c: ChainId) -> Mapped<'_, WorldEvent, impl Fn(ChainEvent) -> WorldEvent> {
    Mapped::new(k, move |e| WorldEvent::Chain(c, e))
}

fn conn_ctx(k: &mut Kernel<WorldEvent>) -> Mapped<'_, WorldEvent, fn(ConnEvent) -> WorldEvent> {
    Mapped::new(k, WorldEvent::Conn as fn(ConnEvent) -> WorldEvent)
}

impl World {
    pub fn new(sc: Scenario) -> Result<Self, Error> {
        let mut k = Kernel::new(sc.seed);
        let conn = Connector::new(sc.connector.clone(), &mut conn_ctx(&mut k));
        let mut next_tx = 1;
        let mut ds = Vec::new();
        let mut slots = Vec::new();
        for spec in &sc.chains {
            let c = spec.id;
            let mut attacks = Vec::new();
            for plan in sc.attacks.iter().filter(|a| a.chain == c) {
                let mut a = plan.spec();
                if plan.kind == AttackKind::DoubleSpend {
                    let dest = plan.dest.expect("validated");
                    let victim = TxId(next_tx);
                    let conflict = TxId(next_tx + 1);
                    next_tx += 2;
                    a.victim_tx = Some(Arc::new(Tx::new(victim, c, dest, payload(victim, 16), plan.start)));
                    a.conflict_tx = Some(Arc::new(
                        Tx::new(conflict, c, c, payload(conflict, 16), plan.start).conflicting(victim),
                    ));
                    ds.push(DoubleSpendPlan {
                        chain: c,
                        attack: attacks.len(),
                        dest,
                        victim,
                        start: plan.start,
                    });
                }
                attacks.push(a);
            }
            let chain = Chain::spawn(spec.clone(), attacks, &mut chain_ctx(&mut k, c))?;
            let relays = (0..spec.relays)
                .map(|r| RelayNode::new(c, NodeId((spec.miners() + r) as u32), sc.relay.clone()))
                .collect();
            let sentinel = Sentinel::new(
                c,
                sc.detectors.clone(),
                spec.shares.clone(),
                spec.node_count(),
                spec.latency.median(),
                spec.latency.high(),
                0.0,
            );
            slots.push(Slot {
                chain,
                relays,
                hints: vec![0; spec.relays],
                sentinel,
                monitor: Some(0),
                stats: None,
                controls: VecDeque::new(),
                nominal_interval: spec.block_interval,
                floor: sc.assumed_adversary[c.index()],
            });
        }

        let mut finality = FinalityService::new(Arc::new(CatchUpRace), sc.policies.clone());
        for s in &slots {
            let inputs = FinalityInputs::new(s.floor, s.nominal_interval)?;
            finality.set_inputs(s.chain.spec().id, inputs);
        }
        finality.rebuild(0.0);

        let created = ds.iter().map(|p| (p.victim, p.start)).collect();

        let mut w = Self {
            k,
            slots,
            conn,
            finality,
            tokens: BTreeMap::new(),
            next_token: 1,
            next_tx,
            created,
            transitions: Vec::new(),
            flags: Vec::new(),
            deliveries: BTreeMap::new(),
            breakers: Vec::new(),
            ds,
            notices: Vec::new(),
            conn_out: Vec::new(),
            sc,
        };
        w.schedule_initial();
        Ok(w)
    }

    fn schedule_initial(&mut self) {
        let rc = self.sc.relay.clone();
        for (i, s) in self.slots.iter().enumerate() {
            let chain = ChainId(i as u32);
            for relay in 0..s.relays.len() {
                self.k.schedule_after(rc.poll_interval, WorldEvent::Poll { chain, relay });
                self.k.schedule_after(rc.stats_period, WorldEvent::Stats { chain, relay });
            }
            if self.sc.detectors.enabled {
                self.k
                    .schedule_after(self.sc.detectors.sweep_interval, WorldEvent::Sweep { chain });
            }
        }
        for (stream, t) in self.sc.traffic.iter().enumerate() {
            self.k.schedule_after(t.start, WorldEvent::Traffic { stream, index: 0 });
        }
        for (i, s) in self.sc.scripts.iter().enumerate() {
            self.k.schedule_after(s.at, WorldEvent::Script(i));
        }
    }

    pub fn now(&self) -> Time {
        self.k.now()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn chain(&self, c: ChainId) -> &Chain {
        &self.slots[c.index()].chain
    }

    pub fn relays(&self, c: ChainId) -> &[RelayNode] {
        &self.slots[c.index()].relays
    }

    pub fn sentinel(&self, c: ChainId) -> &Sentinel {
        &self.slots[c.index()].sentinel
    }

    pub fn connector(&self) -> &Connector {
        &self.conn
    }

    pub fn finality(&self) -> &FinalityService {
        &self.finality
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn deliveries(&self) -> &BTreeMap<TxId, Time> {
        &self.deliveries
    }

    /// Processes every event up to `t` (capped at the scenario duration).
    pub fn run_until(&mut self, t: Time) -> Result<(), InvariantViolation> {
        let end = t.min(self.sc.duration);
        while let Some(ev) = self.k.next_event(end) {
            self.dispatch(ev.kind)?;
        }
        if end > self.k.now() {
            self.k.advance_to(end).expect("monotone");
        }
        Ok(())
    }

    /// Runs to the scenario duration, checks end-of-run invariants and builds the report.
    pub fn finish(mut self) -> Result<RunReport, InvariantViolation> {
        self.run_until(self.sc.duration)?;
        self.conn.check_prefix_consistency()?;
        check_transitions(&self.transitions)?;
        let ledger = self.conn.ledger();
        self.check_breaker_soundness(&ledger)?;
        let report = self.build_report(ledger)?;
        Ok(report)
    }

    fn dispatch(&mut self, ev: WorldEvent) -> Result<(), InvariantViolation> {
        match ev {
            WorldEvent::Chain(c, ev) => {
                let mut out = std::mem::take(&mut self.notices);
                self.slots[c.index()]
                    .chain
                    .handle(ev, &mut chain_ctx(&mut self.k, c), &mut out);
                let mut result = Ok(());
                for n in out.drain(..) {
                    if result.is_ok() {
                        result = self.on_notice(c, n);
                    }
                }
                self.notices = out;
                result?;
            }
            WorldEvent::Conn(ev) => {
                let mut out = std::mem::take(&mut self.conn_out);
                self.conn.handle(ev, &mut conn_ctx(&mut self.k), &mut out);
                for ConnOutput::Reply { token, reply, .. } in out.drain(..) {
                    let d = self.conn.sample_latency(&mut conn_ctx(&mut self.k));
                    self.k.schedule_after(d, WorldEvent::ConnReply { token, reply });
                }
                self.conn_out = out;
            }
            WorldEvent::ConnReply { token, reply } => self.on_reply(token, reply)?,
            WorldEvent::Poll { chain, relay } => {
                self.poll(chain, relay)?;
                self.k
                    .schedule_after(self.sc.relay.poll_interval, WorldEvent::Poll { chain, relay });
            }
            WorldEvent::Stats { chain, relay } => {
                self.push_stats(chain, relay);
                self.k
                    .schedule_after(self.sc.relay.stats_period, WorldEvent::Stats { chain, relay });
            }
            WorldEvent::Sweep { chain } => {
                self.sweep(chain)?;
                self.k
                    .schedule_after(self.sc.detectors.sweep_interval, WorldEvent::Sweep { chain });
            }
            WorldEvent::Retry {
                chain,
                relay,
                tx,
                attempt,
            } => self.retry(chain, relay, tx, attempt),
            WorldEvent::ControlRetry { chain } => self.control_retry(chain),
            WorldEvent::Traffic { stream, index } => self.traffic(stream, index),
            WorldEvent::Script(i) => self.script(i)?,
        }
        Ok(())
    }

    fn on_notice(&mut self, c: ChainId, n: ChainNotice) -> Result<(), InvariantViolation> {
        let now = self.k.now();
        let slot = &mut self.slots[c.index()];
        match n {
            ChainNotice::AtRelay { relay, from, item } => {
                let r = slot.relay_index(relay);
                let is_monitor = slot.monitor == Some(r);
                let count = match &item {
                    Received::Junk(n) => u64::from(*n),
                    _ => 1,
                };
                slot.relays[r].count_message(from, count);
                if is_monitor {
                    slot.sentinel.on_traffic(from, count, now);
                }
                match item {
                    Received::Block(b) => {
                        slot.relays[r].note_traverse(now - b.timestamp);
                        if is_monitor {
                            slot.sentinel.on_block_arrival(from, &b, now);
                        }
                    }
                    Received::Pong { sent_at, inbound_blocks } => {
                        slot.sentinel.on_pong(relay, from, sent_at, inbound_blocks);
                    }
                    Received::Tx(_) | Received::Junk(_) => {}
                }
            }
            ChainNotice::RelayView { relay, outcome } => {
                let r = slot.relay_index(relay);
                if slot.monitor == Some(r) {
                    slot.sentinel.on_best_extended(outcome.extended.iter().map(|b| b.as_ref()), now);
                }
                let store = &slot.chain.node(relay).store;
                let subs = slot.relays[r].on_view(&outcome, store, self.finality.table(), now, &mut self.transitions)?;
                for s in subs {
                    self.send_transfer(c, r, s);
                }
            }
            ChainNotice::Mined { .. } | ChainNotice::Released { .. } | ChainNotice::DoubleSpend { .. } => {}
        }
        Ok(())
    }

    fn send(&mut self, chain: ChainId, relay: usize, cmd: Command, pending: Pending) {
        let token = self.next_token;
        self.next_token += 1;
        self.tokens.insert(token, Outstanding { chain, relay, pending });
        let to = self.slots[chain.index()].hints[relay];
        self.conn.submit(to, cmd, ClientToken(token), &mut conn_ctx(&mut self.k));
    }

    fn send_transfer(&mut self, chain: ChainId, relay: usize, sub: Submission) {
        let attempt = self.slots[chain.index()].relays[relay].attempts(sub.tx);
        self.send(chain, relay, Command::Transfer(sub.record), Pending::Transfer(sub.tx));
        let wait = self.sc.relay.submit_timeout + self.backoff(attempt.saturating_sub(1));
        self.k.schedule_after(
            wait,
            WorldEvent::Retry {
                chain,
                relay,
                tx: sub.tx,
                attempt,
            },
        );
    }

    fn backoff(&mut self, attempt: u32) -> f64 {
        let cfg = self.sc.relay.clone();
        cfg.backoff(attempt, self.k.rng_stream("relay.backoff"))
    }

    fn rotate_hint(&mut self, chain: ChainId, relay: usize) {
        let n = self.conn.size();
        let h = &mut self.slots[chain.index()].hints[relay];
        *h = (*h + 1) % n;
    }

    fn resend(&mut self, chain: ChainId, relay: usize, tx: TxId) -> bool {
        let slot = &mut self.slots[chain.index()];
        let node = slot.relay_node(relay);
        let sub = slot.relays[relay].retry(tx, &slot.chain.node(node).store);
        match sub {
            Some(sub) => {
                self.send_transfer(chain, relay, sub);
                true
            }
            None => false,
        }
    }

    fn retry(&mut self, chain: ChainId, relay: usize, tx: TxId, attempt: u32) {
        let r = &self.slots[chain.index()].relays[relay];
        if !r.is_awaiting(tx) || r.attempts(tx) != attempt {
            return;
        }
        self.rotate_hint(chain, relay);
        if !self.resend(chain, relay, tx) {
            // origin currently too shallow: wait and look again
            let wait = self.backoff(attempt);
            self.k.schedule_after(
                wait,
                WorldEvent::Retry {
                    chain,
                    relay,
                    tx,
                    attempt,
                },
            );
        }
    }

    fn on_reply(&mut self, token: ClientToken, reply: ClientReply) -> Result<(), InvariantViolation> {
        let Some(o) = self.tokens.remove(&token.0) else {
            return Ok(());
        };
        let now = self.k.now();
        if !self.slots[o.chain.index()].relays[o.relay].is_alive() {
            return Ok(());
        }
        match (reply, o.pending) {
            (ClientReply::NotLeader { hint: Some(h) }, Pending::Transfer(tx)) => {
                self.slots[o.chain.index()].hints[o.relay] = h;
                if self.slots[o.chain.index()].relays[o.relay].is_awaiting(tx) {
                    self.resend(o.chain, o.relay, tx);
                }
            }
            (ClientReply::NotLeader { hint }, _) => match hint {
                Some(h) => self.slots[o.chain.index()].hints[o.relay] = h,
                None => self.rotate_hint(o.chain, o.relay),
            },
            (ClientReply::Committed { seq }, Pending::Transfer(tx)) => {
                self.slots[o.chain.index()].relays[o.relay].on_committed(tx, seq, now, &mut self.transitions);
            }
            (ClientReply::Rejected, Pending::Transfer(tx)) => {
                self.slots[o.chain.index()].relays[o.relay].on_rejected(tx, now, &mut self.transitions);
            }
            _ => {}
        }
        Ok(())
    }

    fn poll(&mut self, chain: ChainId, relay: usize) -> Result<(), InvariantViolation> {
        let now = self.k.now();
        let slot = &mut self.slots[chain.index()];
        if !slot.relays[relay].is_alive() {
            return Ok(());
        }
        let node = slot.relay_node(relay);
        let subs = slot.relays[relay].refresh(
            &slot.chain.node(node).store,
            self.finality.table(),
            now,
            &mut self.transitions,
        )?;
        for s in subs {
            self.send_transfer(chain, relay, s);
        }

        let hint = self.slots[chain.index()].hints[relay];
        let reader = if self.conn.is_alive(hint) {
            Some(hint)
        } else {
            self.conn.live_nodes().next()
        };
        let Some(reader) = reader else { return Ok(()) };
        let slot = &mut self.slots[chain.index()];
        let entries = self.conn.read_from(reader, slot.relays[relay].ledger_offset());
        let inbound = slot.relays[relay].on_ledger(&entries, now, &mut self.transitions);
        for e in inbound {
            let r = &e.record;
            let tx = Arc::new(Tx::new(r.tx_id, r.source, r.dest, r.payload.clone(), now));
            let dest = r.dest;
            match self.slots[dest.index()]
                .chain
                .submit_tx(tx, None, &mut chain_ctx(&mut self.k, dest))
            {
                Ok(()) => {
                    if self.deliveries.insert(r.tx_id, now).is_some() {
                        return Err(InvariantViolation::new(
                            "exactly-once delivery",
                            format!("{} injected twice into {}", r.tx_id, dest),
                        ));
                    }
                    self.slots[chain.index()].relays[relay].log_delivery(&e, now, &mut self.transitions);
                }
                Err(ChainError::DuplicateTx(_)) => {}
                Err(other) => return Err(InvariantViolation::new("delivery", other.to_string())),
            }
        }
        Ok(())
    }

    fn push_stats(&mut self, chain: ChainId, relay: usize) {
        let now = self.k.now();
        let slot = &mut self.slots[chain.index()];
        if !slot.relays[relay].is_alive() {
            return;
        }
        let node = slot.relay_node(relay);
        let stats = slot.relays[relay].stats(&slot.chain.node(node).store, slot.sentinel.q_est());
        let q = slot.floor.max(stats.q_est).min(1.0);
        let t = stats.t_hat.filter(|t| *t > 0.0).unwrap_or(slot.nominal_interval);
        slot.stats = Some(stats);
        let inputs = FinalityInputs::new(q, t).expect("q clamped to [0,1], interval positive");
        self.finality.push_stats(chain, inputs, now);
    }

    fn sweep(&mut self, chain: ChainId) -> Result<(), InvariantViolation> {
        let now = self.k.now();
        let slot = &mut self.slots[chain.index()];
        let monitor = slot.first_alive_relay();
        if monitor != slot.monitor {
            if let Some(old) = slot.monitor {
                let node = slot.relay_node(old);
                slot.sentinel.forget_monitor(node);
            }
            slot.monitor = monitor;
        }
        let Some(m) = monitor else { return Ok(()) };
        let mnode = slot.relay_node(m);
        let miners = slot.chain.ping_miners(mnode, &mut chain_ctx(&mut self.k, chain));
        slot.sentinel.on_ping_sent(mnode, miners, now);
        let out = slot.sentinel.sweep(now);
        let open = slot.sentinel.breaker().open;
        for f in &out.new_flags {
            self.flags.push(FlagRow {
                time: now,
                chain,
                node: Some(f.node),
                reason: f.reason.as_str().to_owned(),
                q_est: out.q_est,
                breaker_open: open,
            });
        }
        if self.sc.detectors.blacklist && !out.new_flags.is_empty() {
            let nodes: Vec<NodeId> = out.new_flags.iter().map(|f| f.node).collect();
            slot.sentinel.stop_probing(&nodes);
            slot.chain.blacklist(nodes, now);
        }
        if let Some(open) = out.breaker_change {
            self.breaker_decision(chain, open);
        }
        Ok(())
    }

    fn breaker_decision(&mut self, chain: ChainId, open: bool) {
        let now = self.k.now();
        let slot = &mut self.slots[chain.index()];
        for r in &mut slot.relays {
            r.set_breaker(open, now, &mut self.transitions);
        }
        let b = slot.sentinel.breaker().clone();
        self.flags.push(FlagRow {
            time: now,
            chain,
            node: None,
            reason: if open { "breaker-open" } else { "breaker-close" }.into(),
            q_est: b.q_est,
            breaker_open: open,
        });
        if open {
            self.breakers.push(BreakerEpisode {
                chain,
                episode: b.episode,
                decided_open: now,
                applied_open: None,
                decided_close: None,
                applied_close: None,
            });
        } else if let Some(e) = self.breakers.iter_mut().rev().find(|e| e.chain == chain && e.episode == b.episode) {
            e.decided_close = Some(now);
        }
        slot.controls.push_back(BreakerCmd {
            episode: b.episode,
            open,
        });
        if slot.controls.len() == 1 {
            self.send_control(chain);
        }
    }

    fn send_control(&mut self, chain: ChainId) {
        let slot = &self.slots[chain.index()];
        let Some(cmd) = slot.controls.front().copied() else { return };
        if let Some(r) = slot.first_alive_relay() {
            let command = Command::Breaker {
                chain,
                open: cmd.open,
                episode: cmd.episode,
            };
            self.send(chain, r, command, Pending::Breaker);
        }
        self.k
            .schedule_after(self.sc.relay.submit_timeout, WorldEvent::ControlRetry { chain });
    }

    /// Confirms the head breaker command took effect, then moves on to the next one.
    fn control_retry(&mut self, chain: ChainId) {
        loop {
            let Some(cmd) = self.slots[chain.index()].controls.front().copied() else { return };
            let Some(applied) = self.conn.breaker_applied(chain, cmd.episode, cmd.open) else {
                if let Some(r) = self.slots[chain.index()].first_alive_relay() {
                    self.rotate_hint(chain, r);
                }
                self.send_control(chain);
                return;
            };
            if let Some(e) = self
                .breakers
                .iter_mut()
                .find(|e| e.chain == chain && e.episode == cmd.episode)
            {
                if cmd.open {
                    e.applied_open = Some(applied);
                } else {
                    e.applied_close = Some(applied);
                }
            }
            let q = self.slots[chain.index()].sentinel.q_est();
            self.flags.push(FlagRow {
                time: applied.at,
                chain,
                node: None,
                reason: if cmd.open { "breaker-open-applied" } else { "breaker-close-applied" }.into(),
                q_est: q,
                breaker_open: cmd.open,
            });
            self.slots[chain.index()].controls.pop_front();
        }
    }

    fn traffic(&mut self, stream: usize, index: u32) {
        let now = self.k.now();
        let t = self.sc.traffic[stream].clone();
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        let tx = Arc::new(Tx::new(id, t.source, t.dest, payload(id, t.payload_bytes), now));
        self.created.insert(id, now);
        // ids are fresh, so the chain never reports a duplicate here
        let _ = self.slots[t.source.index()]
            .chain
            .submit_tx(tx, None, &mut chain_ctx(&mut self.k, t.source));
        if index + 1 < t.count {
            self.k
                .schedule_after(t.interval, WorldEvent::Traffic { stream, index: index + 1 });
        }
    }

    fn script(&mut self, i: usize) -> Result<(), InvariantViolation> {
        let now = self.k.now();
        let action = self.sc.scripts[i].action.clone();
        match action {
            ScriptAction::CrashRelay { chain, relay } => self.crash_relay(chain, relay),
            ScriptAction::RecoverRelay { chain, relay } => self.recover_relay(chain, relay),
            ScriptAction::CrashNode { chain, node } => {
                let slot = &mut self.slots[chain.index()];
                if node.index() >= slot.chain.spec().miners() {
                    let r = slot.relay_index(node);
                    self.crash_relay(chain, r);
                } else {
                    slot.chain.crash_node(node);
                }
            }
            ScriptAction::RecoverNode { chain, node } => {
                let slot = &mut self.slots[chain.index()];
                if node.index() >= slot.chain.spec().miners() {
                    let r = slot.relay_index(node);
                    self.recover_relay(chain, r);
                } else {
                    slot.chain.recover_node(node, &mut chain_ctx(&mut self.k, chain));
                }
            }
            ScriptAction::CrashConnector { node } => self.conn.crash(node, &mut conn_ctx(&mut self.k)),
            ScriptAction::RecoverConnector { node } => self.conn.recover(node, &mut conn_ctx(&mut self.k)),
            ScriptAction::CrashConnectorLeader => {
                if let Some(l) = self.conn.leader() {
                    self.conn.crash(l, &mut conn_ctx(&mut self.k));
                }
            }
            ScriptAction::ClearFlags { chain, nodes } => {
                let slot = &mut self.slots[chain.index()];
                slot.sentinel.clear_flags(nodes.as_deref());
                match &nodes {
                    Some(ns) => slot.chain.unblacklist(ns.iter().copied()),
                    None => {
                        let all: Vec<NodeId> = slot.chain.blacklisted().keys().copied().collect();
                        slot.chain.unblacklist(all);
                    }
                }
                let mut change = None;
                slot.sentinel.update_estimate(now, &mut change);
                if let Some(open) = change {
                    self.breaker_decision(chain, open);
                }
            }
        }
        self.conn.check_prefix_consistency()
    }

    fn crash_relay(&mut self, chain: ChainId, relay: usize) {
        let slot = &mut self.slots[chain.index()];
        let node = slot.relay_node(relay);
        slot.relays[relay].set_alive(false);
        slot.chain.crash_node(node);
        if slot.monitor == Some(relay) {
            slot.sentinel.forget_monitor(node);
            slot.monitor = slot.first_alive_relay();
        }
    }

    fn recover_relay(&mut self, chain: ChainId, relay: usize) {
        let slot = &mut self.slots[chain.index()];
        let node = slot.relay_node(relay);
        slot.relays[relay].set_alive(true);
        slot.chain.recover_node(node, &mut chain_ctx(&mut self.k, chain));
        let awaiting: Vec<(TxId, u32)> = slot.relays[relay]
            .transfers()
            .iter()
            .filter(|(_, t)| t.state == TransferState::Submitted)
            .map(|(id, t)| (*id, t.attempts))
            .collect();
        for (tx, attempt) in awaiting {
            self.k.schedule_after(
                0.0,
                WorldEvent::Retry {
                    chain,
                    relay,
                    tx,
                    attempt,
                },
            );
        }
    }

    fn check_breaker_soundness(&self, ledger: &[crate::connector::LedgerEntry]) -> Result<(), InvariantViolation> {
        for e in &self.breakers {
            let Some(open) = e.applied_open else { continue };
            let close = e.applied_close.map_or(ledger.len() as u64, |c| c.ledger_len);
            if let Some(bad) = ledger
                .iter()
                .find(|l| l.seq > open.ledger_len && l.seq <= close && l.record.source == e.chain)
            {
                return Err(InvariantViolation::new(
                    "breaker soundness",
                    format!(
                        "seq {} from {} committed while episode {} was open",
                        bad.seq, e.chain, e.episode
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Store used as the chain's final truth: first live relay node's view.
    fn canonical(&self, c: ChainId) -> &crate::chain::BlockStore {
        let slot = &self.slots[c.index()];
        let r = slot.first_alive_relay().unwrap_or(0);
        &slot.chain.node(slot.relay_node(r)).store
    }

    fn build_report(&self, ledger: Vec<crate::connector::LedgerEntry>) -> Result<RunReport, InvariantViolation> {
        let now = self.k.now();
        let on_best: Vec<BTreeSet<TxId>> = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let store = self.canonical(ChainId(i as u32));
                store
                    .best_chain()
                    .iter()
                    .flat_map(|id| store.get(*id).expect("best chain stored").txs.iter().map(|t| t.id))
                    .collect()
            })
            .collect();

        // per transaction: most advanced state across the source chain's relay nodes
        let mut best_state: BTreeMap<TxId, (TransferState, Time, ChainId, bool)> = BTreeMap::new();
        for s in &self.slots {
            for r in &s.relays {
                for (id, t) in r.transfers() {
                    let e = best_state
                        .entry(*id)
                        .or_insert((t.state, t.observed_at, t.tx.source, false));
                    if rank(t.state) > rank(e.0) {
                        e.0 = t.state;
                    }
                    e.1 = e.1.min(t.observed_at);
                    e.3 |= t.reverted_after_maturity;
                }
            }
        }
        let on_ledger: BTreeSet<TxId> = ledger.iter().map(|e| e.record.tx_id).collect();
        let mut counts = TransferCounts {
            created: self.created.len() as u64,
            observed: best_state.len() as u64,
            ledger_len: ledger.len() as u64,
            ..Default::default()
        };
        let mut latencies = Vec::new();
        for (id, (state, observed_at, source, reverted)) in &best_state {
            if *reverted {
                counts.reverted_after_maturity += 1;
            }
            if let Some(t) = self.deliveries.get(id) {
                counts.delivered += 1;
                latencies.push(t - observed_at);
                if !on_best[source.index()].contains(id) {
                    counts.reversals_after_delivery += 1;
                }
            } else if on_ledger.contains(id) {
                counts.committed += 1;
            } else if *state == TransferState::Dropped {
                counts.dropped += 1;
            } else {
                counts.pending += 1;
            }
        }
        if counts.delivered + counts.committed + counts.pending + counts.dropped != counts.observed {
            return Err(InvariantViolation::new("accounting closure", format!("{counts:?}")));
        }
        if let Some(id) = on_ledger.iter().find(|id| !best_state.contains_key(id)) {
            return Err(InvariantViolation::new(
                "accounting closure",
                format!("ledger holds {id}, which no relay node observed"),
            ));
        }
        if let Some(id) = self.deliveries.keys().find(|id| !on_ledger.contains(id)) {
            return Err(InvariantViolation::new(
                "accounting closure",
                format!("{id} delivered without a ledger entry"),
            ));
        }

        let chains = self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = ChainId(i as u32);
                let store = self.canonical(c);
                ChainMetrics {
                    chain: c,
                    name: s.chain.spec().name.clone(),
                    blocks_mined: s.chain.mined_total(),
                    best_height: store.tip_height(),
                    stale_blocks: store.stale_count() as u64,
                    t_hat: s.stats.as_ref().and_then(|st| st.t_hat),
                    q_est: s.sentinel.q_est(),
                    flagged: s.sentinel.flags().nodes().count(),
                    blacklisted: s.chain.blacklisted().len(),
                    breaker_open: s.sentinel.breaker().open,
                }
            })
            .collect();

        let double_spends = self
            .ds
            .iter()
            .map(|p| {
                let delivered = self.deliveries.contains_key(&p.victim);
                DoubleSpendRecord {
                    chain: p.chain,
                    dest: p.dest,
                    victim: p.victim,
                    outcome: self.slots[p.chain.index()].chain.double_spend_outcome(p.attack),
                    delivered,
                    reverted: delivered && !on_best[p.chain.index()].contains(&p.victim),
                }
            })
            .collect();

        Ok(RunReport {
            seed: self.sc.seed,
            duration: now,
            events: self.k.stats().fired,
            chains,
            transfers: counts,
            latency: LatencySummary::from_samples(&latencies),
            flags: self.flags.clone(),
            breakers: self.breakers.clone(),
            double_spends,
            transitions: self.transitions.clone(),
            ledger,
            deliveries: self.deliveries.clone(),
            finality: self.finality.table().entries().cloned().collect(),
        })
    }
}

fn rank(s: TransferState) -> u8 {
    match s {
        TransferState::Dropped => 0,
        TransferState::Observed => 1,
        TransferState::Matured => 2,
        TransferState::Submitted => 3,
        TransferState::Committed => 4,
        TransferState::Delivered => 5,
    }
}

fn payload(id: TxId, bytes: usize) -> Vec<u8> {
    id.0.to_le_bytes().iter().copied().cycle().take(bytes).collect()
}

/// Every logged transition starts from the state the previous one ended in.
pub fn check_transitions(log: &[Transition]) -> Result<(), InvariantViolation> {
    let mut last: BTreeMap<(ChainId, NodeId, TxId), TransferState> = BTreeMap::new();
    for t in log {
        if t.to == TransferState::Delivered {
            // logged by the destination side, which holds no transfer record
            if t.from != Some(TransferState::Committed) {
                return Err(InvariantViolation::new("legal transitions", format!("{t:?}")));
            }
            continue;
        }
        let key = (t.chain, t.relay, t.tx);
        let prev = last.get(&key).copied();
        let ok = match (prev, t.from) {
            (None, None) => t.to == TransferState::Observed,
            (Some(p), Some(f)) => p == f && f.may_become(t.to),
            _ => false,
        };
        if !ok {
            return Err(InvariantViolation::new(
                "legal transitions",
                format!("{} at {}/{}: {:?} after {:?}", t.tx, t.chain, t.relay, t, prev),
            ));
        }
        last.insert(key, t.to);
    }
    Ok(())
}

/// Runs a scenario to completion.
pub fn run(sc: &Scenario) -> Result<RunReport, Error> {
    let w = World::new(sc.clone())?;
    Ok(w.finish()?)
}
