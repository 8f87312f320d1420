//! Security monitoring for one chain, run from its relay nodes.
//!
//! Detectors are plain functions over observation summaries; [`Sentinel`]
//! keeps the observation logs, runs the detectors on each sweep, folds
//! flagged miners into a single conservative adversary estimate and drives
//! the circuit breaker.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::Block;
use crate::types::{BlockId, ChainId, NodeId, Time};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub enabled: bool,
    pub sweep_interval: f64,
    pub heartbeat_timeout: f64,
    pub eclipse_window: f64,
    pub eclipse_k: u64,
    pub ddos_window: f64,
    pub ddos_k_sigma: f64,
    /// Published blocks observed before the selfish detector may flag.
    pub selfish_min_blocks: u64,
    pub selfish_theta: f64,
    /// Releases a sender needs before its burst fraction is trusted.
    pub selfish_min_releases: u64,
    /// Burst grouping gap; defaults to twice the median gossip latency.
    pub selfish_epsilon: Option<f64>,
    pub breaker_threshold: f64,
    pub blacklist: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            sweep_interval: 5.0,
            heartbeat_timeout: 10.0,
            eclipse_window: 60.0,
            eclipse_k: 3,
            ddos_window: 30.0,
            ddos_k_sigma: 5.0,
            selfish_min_blocks: 50,
            selfish_theta: 0.2,
            selfish_min_releases: 5,
            selfish_epsilon: None,
            breaker_threshold: 0.33,
            blacklist: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    Unresponsive,
    EclipseVictim,
    DdosSource,
    SelfishGroup,
}

impl FlagReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagReason::Unresponsive => "unresponsive",
            FlagReason::EclipseVictim => "eclipse-victim",
            FlagReason::DdosSource => "ddos-source",
            FlagReason::SelfishGroup => "selfish-group",
        }
    }
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flag {
    pub node: NodeId,
    pub reason: FlagReason,
    pub at: Time,
}

/// Flagged nodes of one chain. Monotone unless explicitly cleared.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagSet {
    flags: BTreeMap<NodeId, BTreeMap<FlagReason, Time>>,
}

impl FlagSet {
    /// Returns true when the (node, reason) pair is new.
    pub fn insert(&mut self, node: NodeId, reason: FlagReason, at: Time) -> bool {
        let reasons = self.flags.entry(node).or_default();
        if reasons.contains_key(&reason) {
            return false;
        }
        reasons.insert(reason, at);
        true
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.flags.contains_key(&node)
    }

    pub fn has(&self, node: NodeId, reason: FlagReason) -> bool {
        self.flags.get(&node).is_some_and(|r| r.contains_key(&reason))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.flags.keys().copied()
    }

    pub fn reasons(&self, node: NodeId) -> impl Iterator<Item = (FlagReason, Time)> + '_ {
        self.flags.get(&node).into_iter().flat_map(|r| r.iter().map(|(k, v)| (*k, *v)))
    }

    pub fn clear(&mut self, nodes: Option<&[NodeId]>) {
        match nodes {
            None => self.flags.clear(),
            Some(ns) => ns.iter().for_each(|n| {
                self.flags.remove(n);
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakerState {
    pub chain: ChainId,
    pub open: bool,
    pub q_est: f64,
    pub threshold: f64,
    /// Incremented on every opening.
    pub episode: u64,
    pub since: Time,
}

/// Nodes whose oldest unanswered heartbeat is at least `timeout` old.
pub fn heartbeat_check<'a>(
    outstanding: impl IntoIterator<Item = (NodeId, Option<Time>)> + 'a,
    now: Time,
    timeout: f64,
) -> BTreeSet<NodeId> {
    outstanding
        .into_iter()
        .filter(|(_, oldest)| matches!(oldest, Some(t) if now - t >= timeout))
        .map(|(n, _)| n)
        .collect()
}

/// All flagged miners treated as one adversary: the sum of their shares.
pub fn estimate_adversary(flagged: impl IntoIterator<Item = NodeId>, shares: &[f64]) -> f64 {
    let set: BTreeSet<NodeId> = flagged.into_iter().collect();
    let q: f64 = set.iter().filter_map(|n| shares.get(n.index())).sum();
    q.clamp(0.0, 1.0)
}

/// Breaker decision; the threshold is inclusive.
pub fn circuit_breaker(q_est: f64, threshold: f64) -> bool {
    q_est >= threshold
}

/// Eclipse evidence for one node over one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceptionWindow {
    pub node: NodeId,
    /// New blocks the node accepted in the window.
    pub received: u64,
    /// Best-chain growth by blocks other nodes mined in the window.
    pub growth: u64,
}

pub fn detect_eclipse(windows: &[ReceptionWindow], k: u64) -> BTreeSet<NodeId> {
    windows
        .iter()
        .filter(|w| w.received == 0 && w.growth >= k && k > 0)
        .map(|w| w.node)
        .collect()
}

/// Flags nodes whose message rate exceeds the leave-one-out peer mean by
/// more than `k_sigma` deviations. The deviation is floored at the Poisson
/// noise of the peer mean over the window; when peers show no spread at all
/// the rule falls back to `rate > 10 x mean`.
pub fn detect_ddos(counts: &BTreeMap<NodeId, u64>, window: f64, k_sigma: f64) -> BTreeSet<NodeId> {
    let mut flagged = BTreeSet::new();
    if counts.len() < 2 || window <= 0.0 {
        return flagged;
    }
    let total: f64 = counts.values().map(|c| *c as f64).sum();
    let total_sq: f64 = counts.values().map(|c| (*c as f64).powi(2)).sum();
    let n = counts.len() as f64;
    for (node, c) in counts {
        let c = *c as f64;
        let m = n - 1.0;
        let mean = (total - c) / m;
        let var = ((total_sq - c * c) / m - mean * mean).max(0.0);
        let sd = var.sqrt();
        let hit = if sd == 0.0 {
            c > 10.0 * mean
        } else {
            let noise = sd.max(mean.sqrt());
            c > mean + k_sigma * noise
        };
        if hit {
            flagged.insert(*node);
        }
    }
    flagged
}

/// Publication bursts attributed to one sender.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReleaseStats {
    pub releases: u64,
    pub multi: u64,
    /// Miners whose blocks appeared in this sender's multi-block releases.
    pub co_miners: BTreeSet<NodeId>,
}

impl ReleaseStats {
    pub fn burst_fraction(&self) -> f64 {
        if self.releases == 0 {
            0.0
        } else {
            self.multi as f64 / self.releases as f64
        }
    }
}

/// Senders (plus their co-publishing miners) whose share of multi-block
/// releases exceeds `theta`, once at least `min_blocks` blocks were seen.
pub fn detect_selfish(
    stats: &BTreeMap<NodeId, ReleaseStats>,
    observed_blocks: u64,
    min_blocks: u64,
    min_releases: u64,
    theta: f64,
) -> BTreeSet<NodeId> {
    let mut flagged = BTreeSet::new();
    if observed_blocks < min_blocks {
        return flagged;
    }
    for (sender, s) in stats {
        if s.releases >= min_releases.max(1) && s.burst_fraction() > theta {
            flagged.insert(*sender);
            flagged.extend(s.co_miners.iter().copied());
        }
    }
    flagged
}

#[derive(Debug, Clone)]
struct OpenGroup {
    first: Time,
    last: Time,
    blocks: Vec<(BlockId, Option<BlockId>, NodeId)>,
}

impl OpenGroup {
    fn linked(&self) -> bool {
        let ids: BTreeSet<BlockId> = self.blocks.iter().map(|b| b.0).collect();
        self.blocks.iter().any(|b| b.1.is_some_and(|p| ids.contains(&p)))
    }
}

/// Result of one sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub new_flags: Vec<Flag>,
    pub q_est: f64,
    /// `Some(open)` when the breaker changed state.
    pub breaker_change: Option<bool>,
}

/// Per-chain monitor.
pub struct Sentinel {
    chain: ChainId,
    cfg: DetectorConfig,
    shares: Vec<f64>,
    node_count: usize,
    epsilon: f64,
    grace: f64,
    started: Time,
    flags: FlagSet,
    breaker: BreakerState,
    outstanding: BTreeMap<(NodeId, NodeId), VecDeque<Time>>,
    pongs: BTreeMap<NodeId, VecDeque<(Time, u64)>>,
    /// (arrival, miner) of blocks extending the monitor's best chain.
    growth: VecDeque<(Time, NodeId)>,
    traffic: BTreeMap<NodeId, VecDeque<(Time, u64)>>,
    groups: BTreeMap<NodeId, OpenGroup>,
    releases: BTreeMap<NodeId, ReleaseStats>,
    seen_blocks: BTreeSet<BlockId>,
    q_est: f64,
}

impl Sentinel {
    /// `latency_median` and `latency_high` describe the chain's gossip delay.
    pub fn new(
        chain: ChainId,
        cfg: DetectorConfig,
        shares: Vec<f64>,
        node_count: usize,
        latency_median: f64,
        latency_high: f64,
        started: Time,
    ) -> Self {
        let epsilon = cfg.selfish_epsilon.unwrap_or(2.0 * latency_median);
        let threshold = cfg.breaker_threshold;
        Self {
            chain,
            shares,
            node_count,
            epsilon,
            grace: 2.0 * latency_high,
            started,
            flags: FlagSet::default(),
            breaker: BreakerState {
                chain,
                open: false,
                q_est: 0.0,
                threshold,
                episode: 0,
                since: started,
            },
            outstanding: BTreeMap::new(),
            pongs: BTreeMap::new(),
            growth: VecDeque::new(),
            traffic: BTreeMap::new(),
            groups: BTreeMap::new(),
            releases: BTreeMap::new(),
            seen_blocks: BTreeSet::new(),
            q_est: 0.0,
            cfg,
        }
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn flags(&self) -> &FlagSet {
        &self.flags
    }

    pub fn breaker(&self) -> &BreakerState {
        &self.breaker
    }

    pub fn q_est(&self) -> f64 {
        self.q_est
    }

    pub fn release_stats(&self) -> &BTreeMap<NodeId, ReleaseStats> {
        &self.releases
    }

    pub fn on_ping_sent(&mut self, monitor: NodeId, miners: impl IntoIterator<Item = NodeId>, now: Time) {
        for m in miners {
            self.outstanding.entry((monitor, m)).or_default().push_back(now);
        }
    }

    /// Drops unanswered pings to `nodes`, e.g. once they are blacklisted and
    /// their replies are discarded.
    pub fn stop_probing(&mut self, nodes: &[NodeId]) {
        self.outstanding.retain(|(_, m), _| !nodes.contains(m));
    }

    pub fn on_pong(&mut self, monitor: NodeId, miner: NodeId, sent_at: Time, inbound_blocks: u64) {
        if let Some(q) = self.outstanding.get_mut(&(monitor, miner)) {
            while q.front().is_some_and(|t| *t <= sent_at) {
                q.pop_front();
            }
        }
        let samples = self.pongs.entry(miner).or_default();
        if samples.back().map_or(true, |(t, _)| *t < sent_at) {
            samples.push_back((sent_at, inbound_blocks));
        }
        let horizon = sent_at - 2.0 * self.cfg.eclipse_window - 4.0 * self.cfg.sweep_interval;
        while samples.front().is_some_and(|(t, _)| *t < horizon) {
            samples.pop_front();
        }
    }

    /// A monitor went down; its unanswered pings say nothing about miners.
    pub fn forget_monitor(&mut self, monitor: NodeId) {
        self.outstanding.retain(|(m, _), _| *m != monitor);
    }

    pub fn on_traffic(&mut self, from: NodeId, count: u64, now: Time) {
        self.traffic.entry(from).or_default().push_back((now, count));
    }

    /// A block arriving at the monitor relay directly from `from`.
    pub fn on_block_arrival(&mut self, from: NodeId, block: &Block, now: Time) {
        if !self.seen_blocks.insert(block.id) {
            return;
        }
        let entry = (block.id, block.parent, block.miner);
        match self.groups.get_mut(&from) {
            Some(g) if now - g.first <= self.epsilon => {
                g.blocks.push(entry);
                g.last = now;
            }
            _ => {
                if let Some(g) = self.groups.remove(&from) {
                    self.close_group(from, g);
                }
                self.groups.insert(
                    from,
                    OpenGroup {
                        first: now,
                        last: now,
                        blocks: vec![entry],
                    },
                );
            }
        }
    }

    fn close_group(&mut self, sender: NodeId, g: OpenGroup) {
        let s = self.releases.entry(sender).or_default();
        s.releases += 1;
        if g.blocks.len() >= 2 && g.linked() {
            s.multi += 1;
            s.co_miners.extend(g.blocks.iter().map(|b| b.2));
        }
    }

    /// Blocks that extended the monitor's best chain.
    pub fn on_best_extended<'a>(&mut self, blocks: impl IntoIterator<Item = &'a Block>, now: Time) {
        for b in blocks {
            self.growth.push_back((now, b.miner));
        }
    }

    /// Removes flags (all when `nodes` is `None`) and the evidence behind
    /// unresponsive flags.
    pub fn clear_flags(&mut self, nodes: Option<&[NodeId]>) {
        self.flags.clear(nodes);
        match nodes {
            None => self.outstanding.clear(),
            Some(ns) => self.outstanding.retain(|(_, m), _| !ns.contains(m)),
        }
    }

    fn prune(&mut self, now: Time) {
        let keep = (2.0 * self.cfg.eclipse_window).max(self.cfg.ddos_window) + 4.0 * self.cfg.sweep_interval + self.grace;
        while self.growth.front().is_some_and(|(t, _)| *t < now - keep) {
            self.growth.pop_front();
        }
        for q in self.traffic.values_mut() {
            while q.front().is_some_and(|(t, _)| *t <= now - self.cfg.ddos_window) {
                q.pop_front();
            }
        }
    }

    fn eclipse_windows(&self, now: Time) -> Vec<ReceptionWindow> {
        let w = self.cfg.eclipse_window;
        let mut out = Vec::new();
        if now - self.started < w {
            return out;
        }
        for (node, samples) in &self.pongs {
            let Some(&(t1, c1)) = samples.back() else { continue };
            if now - t1 > 2.0 * self.cfg.sweep_interval {
                continue;
            }
            let Some(&(t0, c0)) = samples.iter().rev().find(|(t, _)| *t <= t1 - w) else { continue };
            if t0 < self.started {
                continue;
            }
            let (lo, hi) = (t0 + self.grace, t1 - self.grace);
            let growth = self
                .growth
                .iter()
                .filter(|(t, m)| *t > lo && *t <= hi && m != node)
                .count() as u64;
            out.push(ReceptionWindow {
                node: *node,
                received: c1.saturating_sub(c0),
                growth,
            });
        }
        out
    }

    pub fn sweep(&mut self, now: Time) -> SweepOutcome {
        let mut out = SweepOutcome::default();
        if !self.cfg.enabled {
            out.q_est = self.q_est;
            return out;
        }
        self.prune(now);
        let mut candidates: Vec<(NodeId, FlagReason)> = Vec::new();

        let mut oldest: BTreeMap<NodeId, Option<Time>> = BTreeMap::new();
        for ((_, miner), q) in &self.outstanding {
            let o = oldest.entry(*miner).or_insert(None);
            if let Some(t) = q.front() {
                *o = Some(o.map_or(*t, |x: Time| x.min(*t)));
            }
        }
        candidates.extend(
            heartbeat_check(oldest, now, self.cfg.heartbeat_timeout)
                .into_iter()
                .map(|n| (n, FlagReason::Unresponsive)),
        );

        let windows = self.eclipse_windows(now);
        candidates.extend(
            detect_eclipse(&windows, self.cfg.eclipse_k)
                .into_iter()
                .map(|n| (n, FlagReason::EclipseVictim)),
        );

        if now - self.started >= self.cfg.ddos_window {
            let counts: BTreeMap<NodeId, u64> = (0..self.node_count)
                .map(|i| NodeId(i as u32))
                .filter(|n| self.traffic.contains_key(n))
                .map(|n| (n, self.traffic[&n].iter().map(|(_, c)| *c).sum()))
                .collect();
            candidates.extend(
                detect_ddos(&counts, self.cfg.ddos_window, self.cfg.ddos_k_sigma)
                    .into_iter()
                    .map(|n| (n, FlagReason::DdosSource)),
            );
        }

        let stale: Vec<NodeId> = self
            .groups
            .iter()
            .filter(|(_, g)| now - g.last > self.epsilon && now - g.first > self.epsilon)
            .map(|(s, _)| *s)
            .collect();
        for s in stale {
            let g = self.groups.remove(&s).unwrap();
            self.close_group(s, g);
        }
        candidates.extend(
            detect_selfish(
                &self.releases,
                self.seen_blocks.len() as u64,
                self.cfg.selfish_min_blocks,
                self.cfg.selfish_min_releases,
                self.cfg.selfish_theta,
            )
            .into_iter()
            .map(|n| (n, FlagReason::SelfishGroup)),
        );

        for (node, reason) in candidates {
            if self.flags.insert(node, reason, now) {
                out.new_flags.push(Flag { node, reason, at: now });
            }
        }
        out.q_est = self.update_estimate(now, &mut out.breaker_change);
        out
    }

    /// Recomputes `q_est` from the current flags and applies the breaker rule.
    pub fn update_estimate(&mut self, now: Time, change: &mut Option<bool>) -> f64 {
        self.q_est = estimate_adversary(self.flags.nodes(), &self.shares);
        let open = circuit_breaker(self.q_est, self.breaker.threshold);
        self.breaker.q_est = self.q_est;
        if open != self.breaker.open {
            self.breaker.open = open;
            self.breaker.since = now;
            if open {
                self.breaker.episode += 1;
            }
            *change = Some(open);
        }
        self.q_est
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u32) -> NodeId {
        NodeId(i)
    }

    #[test]
    fn heartbeat_boundary() {
        let out = heartbeat_check([(n(0), None), (n(1), Some(0.0)), (n(2), Some(0.5))], 10.0, 10.0);
        assert_eq!(out, BTreeSet::from([n(1)]));
        assert!(heartbeat_check([(n(0), Some(0.001))], 10.0, 10.0).is_empty());
    }

    #[test]
    fn adversary_sum_uses_set_semantics() {
        let shares = [0.1, 0.15, 0.75];
        assert_eq!(estimate_adversary([], &shares), 0.0);
        assert!((estimate_adversary([n(0), n(1)], &shares) - 0.25).abs() < 1e-12);
        assert!((estimate_adversary([n(0), n(1), n(0)], &shares) - 0.25).abs() < 1e-12);
        let mut fs = FlagSet::default();
        fs.insert(n(0), FlagReason::Unresponsive, 1.0);
        fs.insert(n(0), FlagReason::DdosSource, 2.0);
        assert!((estimate_adversary(fs.nodes(), &shares) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn breaker_threshold_inclusive() {
        assert!(circuit_breaker(0.33, 0.33));
        assert!(!circuit_breaker(0.32, 0.33));
    }

    #[test]
    fn eclipse_rule() {
        let w = |node, received, growth| ReceptionWindow {
            node: n(node),
            received,
            growth,
        };
        let got = detect_eclipse(&[w(0, 4, 5), w(1, 0, 3), w(2, 0, 0), w(3, 0, 2)], 3);
        assert_eq!(got, BTreeSet::from([n(1)]));
    }

    #[test]
    fn ddos_rule() {
        let uniform: BTreeMap<_, _> = (0..10).map(|i| (n(i), 10 + (i as u64 % 3))).collect();
        assert!(detect_ddos(&uniform, 30.0, 5.0).is_empty());
        let mut hot = uniform.clone();
        hot.insert(n(3), 1100);
        assert_eq!(detect_ddos(&hot, 30.0, 5.0), BTreeSet::from([n(3)]));
        let pair: BTreeMap<_, _> = [(n(0), 7), (n(1), 7)].into();
        assert!(detect_ddos(&pair, 30.0, 5.0).is_empty());
        let skew: BTreeMap<_, _> = [(n(0), 7), (n(1), 71)].into();
        assert_eq!(detect_ddos(&skew, 30.0, 5.0), BTreeSet::from([n(1)]));
        let single: BTreeMap<_, _> = [(n(0), 1000)].into();
        assert!(detect_ddos(&single, 30.0, 5.0).is_empty());
    }

    #[test]
    fn selfish_rule() {
        let mut stats = BTreeMap::new();
        stats.insert(
            n(0),
            ReleaseStats {
                releases: 20,
                multi: 7,
                co_miners: BTreeSet::from([n(0), n(4)]),
            },
        );
        stats.insert(
            n(1),
            ReleaseStats {
                releases: 40,
                multi: 1,
                co_miners: BTreeSet::from([n(1)]),
            },
        );
        assert!(detect_selfish(&stats, 49, 50, 5, 0.2).is_empty());
        assert_eq!(detect_selfish(&stats, 60, 50, 5, 0.2), BTreeSet::from([n(0), n(4)]));
    }

    fn block(id: u64, parent: u64, miner: u32) -> Block {
        Block {
            id: BlockId(id),
            parent: Some(BlockId(parent)),
            height: id,
            miner: n(miner),
            timestamp: 0.0,
            txs: vec![],
        }
    }

    #[test]
    fn burst_grouping() {
        let cfg = DetectorConfig {
            selfish_min_blocks: 1,
            selfish_min_releases: 2,
            ..DetectorConfig::default()
        };
        let mut s = Sentinel::new(ChainId(0), cfg, vec![0.5, 0.5], 3, 0.3, 0.5, 0.0);
        // two parent-linked blocks within epsilon, arriving out of order
        s.on_block_arrival(n(0), &block(2, 1, 0), 10.0);
        s.on_block_arrival(n(0), &block(1, 0, 0), 10.2);
        s.on_block_arrival(n(0), &block(3, 2, 0), 30.0);
        s.on_block_arrival(n(1), &block(4, 3, 1), 40.0);
        s.on_block_arrival(n(1), &block(5, 4, 1), 50.0);
        let out = s.sweep(60.0);
        let st = &s.release_stats()[&n(0)];
        assert_eq!((st.releases, st.multi), (2, 1));
        assert_eq!(s.release_stats()[&n(1)].multi, 0);
        assert!(s.flags().has(n(0), FlagReason::SelfishGroup));
        assert!(!s.flags().contains(n(1)));
        assert_eq!(out.breaker_change, Some(true));
    }

    #[test]
    fn breaker_follows_flags() {
        let mut s = Sentinel::new(ChainId(0), DetectorConfig::default(), vec![0.34, 0.66], 3, 0.3, 0.5, 0.0);
        s.flags.insert(n(0), FlagReason::Unresponsive, 1.0);
        let mut change = None;
        s.update_estimate(1.0, &mut change);
        assert_eq!(change, Some(true));
        assert!(s.breaker().open);
        assert_eq!(s.breaker().episode, 1);
        s.clear_flags(None);
        let mut change = None;
        s.update_estimate(2.0, &mut change);
        assert_eq!(change, Some(false));
        assert!(!s.breaker().open);
    }

    #[test]
    fn silent_miner_flagged_after_timeout() {
        let mut s = Sentinel::new(ChainId(0), DetectorConfig::default(), vec![0.5, 0.5], 3, 0.3, 0.5, 0.0);
        let monitor = n(2);
        for i in 0..4 {
            let t = i as f64 * 5.0;
            s.on_ping_sent(monitor, [n(0), n(1)], t);
            s.on_pong(monitor, n(0), t, 0);
            s.sweep(t + 4.9);
        }
        assert!(s.flags().has(n(1), FlagReason::Unresponsive));
        assert!(!s.flags().contains(n(0)));
    }

    #[test]
    fn eclipse_needs_growth() {
        let cfg = DetectorConfig {
            eclipse_window: 20.0,
            ..DetectorConfig::default()
        };
        let mut stalled = Sentinel::new(ChainId(0), cfg.clone(), vec![0.5, 0.5], 3, 0.3, 0.5, 0.0);
        let mut live = Sentinel::new(ChainId(0), cfg, vec![0.5, 0.5], 3, 0.3, 0.5, 0.0);
        for i in 0..12 {
            let t = i as f64 * 5.0;
            for s in [&mut stalled, &mut live] {
                s.on_ping_sent(n(2), [n(0), n(1)], t);
                s.on_pong(n(2), n(0), t, 0);
                s.on_pong(n(2), n(1), t, i);
            }
            live.on_best_extended([&block(100 + i, 99 + i, 1)], t + 2.5);
            stalled.sweep(t + 1.0);
            live.sweep(t + 1.0);
        }
        assert!(stalled.flags().is_empty());
        assert!(live.flags().has(n(0), FlagReason::EclipseVictim));
        assert!(!live.flags().contains(n(1)));
    }
}
