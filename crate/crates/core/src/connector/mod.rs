//! The inter-connector's replicated, totally ordered ledger.
//!
//! A leader-based crash-fault-tolerant log in the Raft family, simulated over
//! kernel messages. Deduplication by tx id happens when a committed entry is
//! applied, so duplicate proposals racing through different leaders still
//! produce a single ledger entry.

mod ledger;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::chain::LatencyModel;
use crate::error::InvariantViolation;
use crate::kernel::{Context, EventHandle};
use crate::types::{ChainId, Time};

pub use ledger::{Applied, Command, LedgerEntry, StateMachine, TransferRecord};

/// Opaque caller reference echoed back with the reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClientToken(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectorConfig {
    pub nodes: usize,
    pub latency: LatencyModel,
    pub election_timeout: (f64, f64),
    pub heartbeat: f64,
    pub max_batch: usize,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        Self {
            nodes: 3,
            latency: LatencyModel::Uniform { min: 0.005, max: 0.02 },
            election_timeout: (1.5, 3.0),
            heartbeat: 0.5,
            max_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub term: u64,
    pub cmd: Command,
}

#[derive(Debug, Clone)]
pub enum Message {
    RequestVote {
        term: u64,
        candidate: usize,
        last_index: u64,
        last_term: u64,
    },
    Vote {
        term: u64,
        from: usize,
        granted: bool,
    },
    Append {
        term: u64,
        leader: usize,
        prev_index: u64,
        prev_term: u64,
        entries: Vec<LogEntry>,
        leader_commit: u64,
    },
    AppendReply {
        term: u64,
        from: usize,
        success: bool,
        match_index: u64,
    },
}

#[derive(Debug, Clone)]
pub enum ConnEvent {
    Deliver { to: usize, msg: Message },
    ElectionTimeout { node: usize },
    Heartbeat { node: usize },
    Request { to: usize, cmd: Command, token: ClientToken },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientReply {
    Committed { seq: u64 },
    Rejected,
    /// Breaker command applied.
    Accepted,
    NotLeader { hint: Option<usize> },
}

#[derive(Debug, Clone)]
pub enum ConnOutput {
    Reply { token: ClientToken, from: usize, reply: ClientReply },
}

/// First application of a breaker command anywhere in the cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakerApplied {
    pub at: Time,
    /// Ledger length when it took effect; later seqs are gated by it.
    pub ledger_len: u64,
}

#[derive(Debug, Clone)]
struct Node {
    alive: bool,
    // persistent
    term: u64,
    voted_for: Option<usize>,
    log: Vec<LogEntry>,
    // volatile
    role: Role,
    commit_index: u64,
    last_applied: u64,
    leader_hint: Option<usize>,
    votes: BTreeSet<usize>,
    next_index: Vec<u64>,
    match_index: Vec<u64>,
    sm: StateMachine,
    pending: BTreeMap<u64, Vec<ClientToken>>,
    election_timer: Option<EventHandle>,
    heartbeat_timer: Option<EventHandle>,
}

impl Node {
    fn new(n: usize) -> Self {
        Self {
            alive: true,
            term: 0,
            voted_for: None,
            log: Vec::new(),
            role: Role::Follower,
            commit_index: 0,
            last_applied: 0,
            leader_hint: None,
            votes: BTreeSet::new(),
            next_index: vec![1; n],
            match_index: vec![0; n],
            sm: StateMachine::default(),
            pending: BTreeMap::new(),
            election_timer: None,
            heartbeat_timer: None,
        }
    }

    fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }
}

pub struct Connector {
    cfg: ConnectorConfig,
    nodes: Vec<Node>,
    /// Time each ledger seq was first applied anywhere (the leader's commit).
    committed_at: Vec<Time>,
    breakers: BTreeMap<(ChainId, u64, bool), BreakerApplied>,
    election_labels: Vec<String>,
    net_label: String,
}

impl Connector {
    pub fn new<C: Context<ConnEvent>>(cfg: ConnectorConfig, ctx: &mut C) -> Self {
        let n = cfg.nodes.max(1);
        let mut c = Self {
            nodes: (0..n).map(|_| Node::new(n)).collect(),
            committed_at: Vec::new(),
            breakers: BTreeMap::new(),
            election_labels: (0..n).map(|i| format!("connector.node{i}.election")).collect(),
            net_label: "connector.net".to_owned(),
            cfg,
        };
        for i in 0..n {
            c.reset_election_timer(i, ctx);
        }
        c
    }

    pub fn config(&self) -> &ConnectorConfig {
        &self.cfg
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    fn majority(&self) -> usize {
        self.nodes.len() / 2 + 1
    }

    pub fn is_alive(&self, node: usize) -> bool {
        self.nodes[node].alive
    }

    pub fn role(&self, node: usize) -> Role {
        self.nodes[node].role
    }

    pub fn term(&self, node: usize) -> u64 {
        self.nodes[node].term
    }

    pub fn commit_index(&self, node: usize) -> u64 {
        self.nodes[node].commit_index
    }

    /// Live leader with the highest term, if any.
    pub fn leader(&self) -> Option<usize> {
        (0..self.nodes.len())
            .filter(|i| self.nodes[*i].alive && self.nodes[*i].role == Role::Leader)
            .max_by_key(|i| self.nodes[*i].term)
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|i| self.nodes[*i].alive)
    }

    pub fn sample_latency<C: Context<ConnEvent>>(&self, ctx: &mut C) -> f64 {
        self.cfg.latency.sample(ctx.rng(&self.net_label))
    }

    /// Sends a client command to `to` over the connector network.
    pub fn submit<C: Context<ConnEvent>>(&mut self, to: usize, cmd: Command, token: ClientToken, ctx: &mut C) {
        let d = self.sample_latency(ctx);
        ctx.schedule_in(d, ConnEvent::Request { to, cmd, token });
    }

    /// Committed entries with `seq >= from_seq` as seen by `node`; empty for a crashed node.
    pub fn read_from(&self, node: usize, from_seq: u64) -> Vec<LedgerEntry> {
        let n = &self.nodes[node];
        if !n.alive {
            return Vec::new();
        }
        let start = from_seq.max(1) as usize - 1;
        n.sm
            .records()
            .iter()
            .enumerate()
            .skip(start)
            .map(|(i, r)| LedgerEntry {
                seq: i as u64 + 1,
                record: r.clone(),
                committed_at: self.committed_at[i],
            })
            .collect()
    }

    pub fn breaker_applied(&self, chain: ChainId, episode: u64, open: bool) -> Option<BreakerApplied> {
        self.breakers.get(&(chain, episode, open)).copied()
    }

    pub fn ledger_len(&self, node: usize) -> u64 {
        self.nodes[node].sm.len()
    }

    pub fn state_machine(&self, node: usize) -> &StateMachine {
        &self.nodes[node].sm
    }

    /// The longest committed ledger across replicas (live or not).
    pub fn ledger(&self) -> Vec<LedgerEntry> {
        let best = (0..self.nodes.len())
            .max_by_key(|i| (self.nodes[*i].sm.len(), std::cmp::Reverse(*i)))
            .unwrap_or(0);
        let n = &self.nodes[best];
        n.sm
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| LedgerEntry {
                seq: i as u64 + 1,
                record: r.clone(),
                committed_at: self.committed_at[i],
            })
            .collect()
    }

    /// Every pair of replicas holds ledgers that are prefixes of one sequence.
    pub fn check_prefix_consistency(&self) -> Result<(), InvariantViolation> {
        for a in 0..self.nodes.len() {
            for b in a + 1..self.nodes.len() {
                let ra = self.nodes[a].sm.records();
                let rb = self.nodes[b].sm.records();
                let k = ra.len().min(rb.len());
                if let Some(i) = (0..k).find(|i| ra[*i] != rb[*i]) {
                    return Err(InvariantViolation::new(
                        "ledger prefix consistency",
                        format!("nodes {a} and {b} disagree at seq {}", i + 1),
                    ));
                }
                let la = &self.nodes[a].log;
                let lb = &self.nodes[b].log;
                let c = (self.nodes[a].commit_index.min(self.nodes[b].commit_index) as usize)
                    .min(la.len())
                    .min(lb.len());
                if la[..c] != lb[..c] {
                    return Err(InvariantViolation::new(
                        "ledger prefix consistency",
                        format!("nodes {a} and {b} committed different log entries"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Drops volatile state; the persistent term, vote and log survive.
    pub fn crash<C: Context<ConnEvent>>(&mut self, node: usize, ctx: &mut C) {
        let n = self.nodes.len();
        let nd = &mut self.nodes[node];
        if !nd.alive {
            return;
        }
        if let Some(h) = nd.election_timer.take() {
            ctx.cancel(h);
        }
        if let Some(h) = nd.heartbeat_timer.take() {
            ctx.cancel(h);
        }
        let persistent = (nd.term, nd.voted_for, std::mem::take(&mut nd.log));
        *nd = Node::new(n);
        nd.alive = false;
        nd.term = persistent.0;
        nd.voted_for = persistent.1;
        nd.log = persistent.2;
    }

    pub fn recover<C: Context<ConnEvent>>(&mut self, node: usize, ctx: &mut C) {
        if self.nodes[node].alive {
            return;
        }
        self.nodes[node].alive = true;
        self.reset_election_timer(node, ctx);
    }

    pub fn handle<C: Context<ConnEvent>>(&mut self, ev: ConnEvent, ctx: &mut C, out: &mut Vec<ConnOutput>) {
        match ev {
            ConnEvent::Deliver { to, msg } => {
                if self.nodes[to].alive {
                    self.on_message(to, msg, ctx, out);
                }
            }
            ConnEvent::ElectionTimeout { node } => {
                self.nodes[node].election_timer = None;
                if self.nodes[node].alive && self.nodes[node].role != Role::Leader {
                    self.start_election(node, ctx, out);
                }
            }
            ConnEvent::Heartbeat { node } => {
                self.nodes[node].heartbeat_timer = None;
                if self.nodes[node].alive && self.nodes[node].role == Role::Leader {
                    self.broadcast_append(node, ctx);
                    let h = ctx.schedule_in(self.cfg.heartbeat, ConnEvent::Heartbeat { node });
                    self.nodes[node].heartbeat_timer = Some(h);
                }
            }
            ConnEvent::Request { to, cmd, token } => {
                if self.nodes[to].alive {
                    self.on_request(to, cmd, token, ctx, out);
                }
            }
        }
    }

    fn send<C: Context<ConnEvent>>(&self, to: usize, msg: Message, ctx: &mut C) {
        let d = self.sample_latency(ctx);
        ctx.schedule_in(d, ConnEvent::Deliver { to, msg });
    }

    fn reset_election_timer<C: Context<ConnEvent>>(&mut self, node: usize, ctx: &mut C) {
        if let Some(h) = self.nodes[node].election_timer.take() {
            ctx.cancel(h);
        }
        let (lo, hi) = self.cfg.election_timeout;
        let d = ctx.rng(&self.election_labels[node]).gen_range(lo..=hi);
        let h = ctx.schedule_in(d, ConnEvent::ElectionTimeout { node });
        self.nodes[node].election_timer = Some(h);
    }

    fn step_down<C: Context<ConnEvent>>(&mut self, node: usize, term: u64, ctx: &mut C) {
        let nd = &mut self.nodes[node];
        if term > nd.term {
            nd.term = term;
            nd.voted_for = None;
        }
        if nd.role == Role::Leader {
            if let Some(h) = nd.heartbeat_timer.take() {
                ctx.cancel(h);
            }
            // clients of a deposed leader learn the outcome by retrying
            nd.pending.clear();
        }
        nd.role = Role::Follower;
        nd.votes.clear();
        self.reset_election_timer(node, ctx);
    }

    fn start_election<C: Context<ConnEvent>>(&mut self, node: usize, ctx: &mut C, out: &mut Vec<ConnOutput>) {
        let nd = &mut self.nodes[node];
        nd.term += 1;
        nd.role = Role::Candidate;
        nd.voted_for = Some(node);
        nd.votes = BTreeSet::from([node]);
        nd.leader_hint = None;
        let (term, last_index) = (nd.term, nd.last_index());
        let last_term = nd.term_at(last_index);
        self.reset_election_timer(node, ctx);
        if self.nodes[node].votes.len() >= self.majority() {
            self.become_leader(node, ctx, out);
            return;
        }
        for peer in 0..self.nodes.len() {
            if peer != node {
                self.send(
                    peer,
                    Message::RequestVote {
                        term,
                        candidate: node,
                        last_index,
                        last_term,
                    },
                    ctx,
                );
            }
        }
    }

    fn become_leader<C: Context<ConnEvent>>(&mut self, node: usize, ctx: &mut C, out: &mut Vec<ConnOutput>) {
        let n = self.nodes.len();
        if let Some(h) = self.nodes[node].election_timer.take() {
            ctx.cancel(h);
        }
        let nd = &mut self.nodes[node];
        nd.role = Role::Leader;
        nd.leader_hint = Some(node);
        let term = nd.term;
        nd.log.push(LogEntry { term, cmd: Command::Noop });
        let last = nd.last_index();
        nd.next_index = vec![last; n];
        nd.match_index = vec![0; n];
        nd.match_index[node] = last;
        self.advance_commit(node, ctx.now(), out);
        self.broadcast_append(node, ctx);
        let h = ctx.schedule_in(self.cfg.heartbeat, ConnEvent::Heartbeat { node });
        self.nodes[node].heartbeat_timer = Some(h);
    }

    fn broadcast_append<C: Context<ConnEvent>>(&self, leader: usize, ctx: &mut C) {
        for peer in 0..self.nodes.len() {
            if peer != leader {
                self.send_append(leader, peer, ctx);
            }
        }
    }

    fn send_append<C: Context<ConnEvent>>(&self, leader: usize, peer: usize, ctx: &mut C) {
        let nd = &self.nodes[leader];
        let next = nd.next_index[peer].max(1);
        let prev_index = next - 1;
        let end = (prev_index as usize + self.cfg.max_batch).min(nd.log.len());
        let entries = nd.log[prev_index as usize..end].to_vec();
        let msg = Message::Append {
            term: nd.term,
            leader,
            prev_index,
            prev_term: nd.term_at(prev_index),
            entries,
            leader_commit: nd.commit_index,
        };
        self.send(peer, msg, ctx);
    }

    fn on_request<C: Context<ConnEvent>>(&mut self, to: usize, cmd: Command, token: ClientToken, ctx: &mut C, out: &mut Vec<ConnOutput>) {
        let nd = &mut self.nodes[to];
        if nd.role != Role::Leader {
            out.push(ConnOutput::Reply {
                token,
                from: to,
                reply: ClientReply::NotLeader { hint: nd.leader_hint },
            });
            return;
        }
        if let Command::Transfer(rec) = &cmd {
            if let Some(seq) = nd.sm.seq_of(rec.tx_id) {
                out.push(ConnOutput::Reply {
                    token,
                    from: to,
                    reply: ClientReply::Committed { seq },
                });
                return;
            }
        }
        let term = nd.term;
        nd.log.push(LogEntry { term, cmd });
        let idx = nd.last_index();
        nd.match_index[to] = idx;
        nd.pending.entry(idx).or_default().push(token);
        self.advance_commit(to, ctx.now(), out);
        self.broadcast_append(to, ctx);
    }

    fn on_message<C: Context<ConnEvent>>(&mut self, me: usize, msg: Message, ctx: &mut C, out: &mut Vec<ConnOutput>) {
        match msg {
            Message::RequestVote {
                term,
                candidate,
                last_index,
                last_term,
            } => {
                if term > self.nodes[me].term {
                    self.step_down(me, term, ctx);
                }
                let nd = &self.nodes[me];
                let my_last = nd.last_index();
                let up_to_date = last_term > nd.term_at(my_last) || (last_term == nd.term_at(my_last) && last_index >= my_last);
                let granted = term == nd.term && nd.voted_for.map_or(true, |v| v == candidate) && up_to_date;
                if granted {
                    self.nodes[me].voted_for = Some(candidate);
                    self.reset_election_timer(me, ctx);
                }
                let reply = Message::Vote {
                    term: self.nodes[me].term,
                    from: me,
                    granted,
                };
                self.send(candidate, reply, ctx);
            }
            Message::Vote { term, from, granted } => {
                if term > self.nodes[me].term {
                    self.step_down(me, term, ctx);
                    return;
                }
                let nd = &mut self.nodes[me];
                if nd.role == Role::Candidate && term == nd.term && granted {
                    nd.votes.insert(from);
                    if nd.votes.len() >= self.majority() {
                        self.become_leader(me, ctx, out);
                    }
                }
            }
            Message::Append {
                term,
                leader,
                prev_index,
                prev_term,
                entries,
                leader_commit,
            } => {
                if term < self.nodes[me].term {
                    let reply = Message::AppendReply {
                        term: self.nodes[me].term,
                        from: me,
                        success: false,
                        match_index: 0,
                    };
                    self.send(leader, reply, ctx);
                    return;
                }
                if term > self.nodes[me].term || self.nodes[me].role != Role::Follower {
                    self.step_down(me, term, ctx);
                } else {
                    self.reset_election_timer(me, ctx);
                }
                let nd = &mut self.nodes[me];
                nd.leader_hint = Some(leader);
                let (success, match_index) = if prev_index > nd.last_index() || nd.term_at(prev_index) != prev_term {
                    (false, prev_index.saturating_sub(1).min(nd.last_index()))
                } else {
                    let mut idx = prev_index;
                    for e in entries {
                        idx += 1;
                        if idx <= nd.last_index() {
                            if nd.term_at(idx) == e.term {
                                continue;
                            }
                            assert!(idx > nd.commit_index, "leader tried to overwrite a committed entry");
                            nd.log.truncate(idx as usize - 1);
                        }
                        nd.log.push(e);
                    }
                    if leader_commit > nd.commit_index {
                        nd.commit_index = leader_commit.min(idx);
                    }
                    (true, idx)
                };
                self.apply_committed(me, ctx.now(), out);
                let reply = Message::AppendReply {
                    term: self.nodes[me].term,
                    from: me,
                    success,
                    match_index,
                };
                self.send(leader, reply, ctx);
            }
            Message::AppendReply {
                term,
                from,
                success,
                match_index,
            } => {
                if term > self.nodes[me].term {
                    self.step_down(me, term, ctx);
                    return;
                }
                let nd = &mut self.nodes[me];
                if nd.role != Role::Leader || term != nd.term {
                    return;
                }
                if success {
                    if match_index > nd.match_index[from] {
                        nd.match_index[from] = match_index;
                    }
                    nd.next_index[from] = nd.match_index[from] + 1;
                    self.advance_commit(me, ctx.now(), out);
                    if self.nodes[me].next_index[from] <= self.nodes[me].last_index() {
                        self.send_append(me, from, ctx);
                    }
                } else {
                    let next = nd.next_index[from].saturating_sub(1).min(match_index + 1).max(1);
                    nd.next_index[from] = next;
                    self.send_append(me, from, ctx);
                }
            }
        }
    }

    fn advance_commit(&mut self, leader: usize, now: Time, out: &mut Vec<ConnOutput>) {
        let majority = self.majority();
        let nd = &mut self.nodes[leader];
        let mut matches = nd.match_index.clone();
        matches.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = matches[majority - 1];
        // only entries of the current term commit by counting replicas
        if candidate > nd.commit_index && nd.term_at(candidate) == nd.term {
            nd.commit_index = candidate;
        }
        self.apply_committed(leader, now, out);
    }

    fn apply_committed(&mut self, node: usize, now: Time, out: &mut Vec<ConnOutput>) {
        let nd = &mut self.nodes[node];
        while nd.last_applied < nd.commit_index {
            nd.last_applied += 1;
            let idx = nd.last_applied;
            let cmd = &nd.log[idx as usize - 1].cmd;
            let applied = nd.sm.apply(cmd);
            match (applied, cmd) {
                (Applied::Committed { seq }, _) if seq > self.committed_at.len() as u64 => self.committed_at.push(now),
                (Applied::Control, Command::Breaker { chain, open, episode }) => {
                    let ledger_len = nd.sm.len();
                    self.breakers
                        .entry((*chain, *episode, *open))
                        .or_insert(BreakerApplied { at: now, ledger_len });
                }
                _ => {}
            }
            if let Some(tokens) = nd.pending.remove(&idx) {
                let reply = match applied {
                    Applied::Committed { seq } | Applied::Duplicate { seq } => ClientReply::Committed { seq },
                    Applied::Rejected => ClientReply::Rejected,
                    Applied::Control => ClientReply::Accepted,
                };
                for token in tokens {
                    out.push(ConnOutput::Reply { token, from: node, reply });
                }
            }
        }
    }
}
