//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! seed = 7
//! duration = 3600.0
//!
//! [connector]            # optional
//! nodes = 3
//!
//! [relay]                # optional
//! per_chain = 2
//!
//! [detectors]            # optional, see DetectorConfig
//! breaker_threshold = 0.33
//!
//! [[chain]]
//! name = "A"
//! miners = 4             # equal shares, or `shares = [..]`
//! block_interval = 10.0
//!
//! [[chain]]
//! name = "B"
//! miners = 4
//! block_interval = 10.0
//!
//! [[policy]]
//! source = "A"           # "*" matches every chain
//! dest = "B"
//! level = "MED"          # or `epsilon = 1e-3`
//!
//! [[traffic]]
//! source = "A"
//! dest = "B"
//! count = 100
//! start = 10.0
//! interval = 5.0
//! ```
//!
//! `[[attack]]` and `[[script]]` entries inject attacks and faults; see
//! [`AttackPlan`] and [`ScriptAction`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::chain::{AttackKind, AttackSpec, ChainSpec, LatencyModel, DEFAULT_BLOCK_CAPACITY};
use crate::connector::ConnectorConfig;
use crate::error::{Error, ValidationErrors, ValidationItem};
use crate::finality::{CollaborationPolicy, SecurityLevel};
use crate::relay::RelayConfig;
use crate::sentinel::DetectorConfig;
use crate::types::{ChainId, NodeId, Time};

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSpec {
    pub source: ChainId,
    pub dest: ChainId,
    pub count: u32,
    pub start: Time,
    pub interval: f64,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub chain: ChainId,
    pub kind: AttackKind,
    pub attackers: Vec<NodeId>,
    pub victims: Vec<NodeId>,
    pub start: Time,
    pub stop: Time,
    /// Ddos junk messages per second per emitter.
    pub rate: f64,
    /// Double-spend: destination chain of the payment being reversed.
    pub dest: Option<ChainId>,
    pub give_up_deficit: u64,
}

impl AttackPlan {
    /// Chain-level attack spec without the double-spend transactions.
    pub fn spec(&self) -> AttackSpec {
        let mut s = AttackSpec::new(self.kind, self.attackers.clone(), self.start, self.stop);
        s.victims = self.victims.clone();
        s.ddos_rate = self.rate;
        s.give_up_deficit = self.give_up_deficit;
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptAction {
    CrashRelay { chain: ChainId, relay: usize },
    RecoverRelay { chain: ChainId, relay: usize },
    CrashNode { chain: ChainId, node: NodeId },
    RecoverNode { chain: ChainId, node: NodeId },
    CrashConnector { node: usize },
    RecoverConnector { node: usize },
    /// Crashes whichever connector node leads at that moment.
    CrashConnectorLeader,
    /// Clears sentinel flags and blacklist entries (all nodes when `None`).
    ClearFlags { chain: ChainId, nodes: Option<Vec<NodeId>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptStep {
    pub at: Time,
    pub action: ScriptAction,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub duration: f64,
    pub chains: Vec<ChainSpec>,
    /// Per-chain floor on the adversary fraction fed to the finality module.
    pub assumed_adversary: Vec<f64>,
    pub connector: ConnectorConfig,
    pub relay: RelayConfig,
    pub detectors: DetectorConfig,
    pub policies: Vec<CollaborationPolicy>,
    pub traffic: Vec<TrafficSpec>,
    pub attacks: Vec<AttackPlan>,
    pub scripts: Vec<ScriptStep>,
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_toml_str(&text)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ValidationErrors> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            ValidationErrors::single(line, e.message().trim().to_owned())
        })?;
        raw.validate(text)
    }

    pub fn chain_by_name(&self, name: &str) -> Option<ChainId> {
        self.chains.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn policy(&self, source: ChainId, dest: ChainId) -> Option<&CollaborationPolicy> {
        self.policies.iter().find(|p| p.source == source && p.dest == dest)
    }

    pub fn inter_chain_tx_count(&self) -> u64 {
        self.traffic.iter().map(|t| u64::from(t.count)).sum()
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Option<u64>,
    duration: Option<f64>,
    #[serde(default)]
    connector: RawConnector,
    #[serde(default)]
    relay: RawRelay,
    #[serde(default)]
    detectors: DetectorConfig,
    #[serde(default)]
    finality: RawFinality,
    #[serde(default)]
    output: RawOutput,
    #[serde(default, rename = "chain")]
    chains: Vec<Spanned<RawChain>>,
    #[serde(default, rename = "policy")]
    policies: Vec<Spanned<RawPolicy>>,
    #[serde(default)]
    traffic: Vec<Spanned<RawTraffic>>,
    #[serde(default, rename = "attack")]
    attacks: Vec<Spanned<RawAttack>>,
    #[serde(default, rename = "script")]
    scripts: Vec<Spanned<RawScript>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConnector {
    nodes: Option<usize>,
    latency: Option<LatencyModel>,
    election_timeout: Option<[f64; 2]>,
    heartbeat: Option<f64>,
    max_batch: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRelay {
    per_chain: Option<usize>,
    stats_window: Option<usize>,
    stats_period: Option<f64>,
    poll_interval: Option<f64>,
    submit_timeout: Option<f64>,
    backoff_base: Option<f64>,
    backoff_cap: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFinality {
    model: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    name: String,
    miners: Option<usize>,
    shares: Option<Vec<f64>>,
    block_interval: f64,
    latency: Option<LatencyModel>,
    block_capacity: Option<usize>,
    relays: Option<usize>,
    assumed_adversary: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    source: String,
    dest: String,
    level: Option<String>,
    epsilon: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraffic {
    source: String,
    dest: String,
    count: u32,
    #[serde(default)]
    start: f64,
    #[serde(default = "default_interval")]
    interval: f64,
    #[serde(default = "default_payload")]
    payload_bytes: usize,
}

fn default_interval() -> f64 {
    1.0
}

fn default_payload() -> usize {
    16
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    chain: String,
    kind: AttackKind,
    #[serde(default)]
    attackers: Vec<u32>,
    #[serde(default)]
    victims: Vec<u32>,
    #[serde(default)]
    start: f64,
    stop: Option<f64>,
    rate: Option<f64>,
    dest: Option<String>,
    give_up_deficit: Option<u64>,
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum RawAction {
    CrashRelay,
    RecoverRelay,
    CrashNode,
    RecoverNode,
    CrashConnector,
    RecoverConnector,
    CrashConnectorLeader,
    ClearFlags,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    at: f64,
    action: RawAction,
    chain: Option<String>,
    relay: Option<usize>,
    node: Option<u32>,
    nodes: Option<Vec<u32>>,
}

struct Errors<'a> {
    text: &'a str,
    items: Vec<ValidationItem>,
}

impl Errors<'_> {
    fn at<T>(&mut self, span: &Spanned<T>, message: impl Into<String>) {
        self.items.push(ValidationItem {
            line: Some(line_of(self.text, span.span().start)),
            message: message.into(),
        });
    }

    fn chain<T>(&mut self, span: &Spanned<T>, names: &BTreeMap<String, ChainId>, name: &str) -> Option<ChainId> {
        let id = names.get(name).copied();
        if id.is_none() {
            self.at(span, format!("unknown chain {name:?}"));
        }
        id
    }

    fn top(&mut self, message: impl Into<String>) {
        self.items.push(ValidationItem {
            line: None,
            message: message.into(),
        });
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl RawScenario {
    fn validate(self, text: &str) -> Result<Scenario, ValidationErrors> {
        let mut err = Errors { text, items: Vec::new() };
        let seed = self.seed.unwrap_or_else(|| {
            err.top("missing required key `seed`");
            0
        });
        let duration = self.duration.unwrap_or_else(|| {
            err.top("missing required key `duration`");
            1.0
        });
        if !positive(duration) {
            err.top(format!("duration must be positive (got {duration})"));
        }

        let def = ConnectorConfig::default();
        let connector = ConnectorConfig {
            nodes: self.connector.nodes.unwrap_or(def.nodes),
            latency: self.connector.latency.unwrap_or(def.latency),
            election_timeout: self
                .connector
                .election_timeout
                .map_or(def.election_timeout, |[a, b]| (a, b)),
            heartbeat: self.connector.heartbeat.unwrap_or(def.heartbeat),
            max_batch: self.connector.max_batch.unwrap_or(def.max_batch),
        };
        if connector.nodes == 0 {
            err.top("connector.nodes must be at least 1");
        }
        let (lo, hi) = connector.election_timeout;
        if !(positive(lo) && hi >= lo && positive(connector.heartbeat) && connector.heartbeat < lo) {
            err.top("connector timing: need 0 < heartbeat < election_timeout[0] <= election_timeout[1]");
        }
        if connector.max_batch == 0 {
            err.top("connector.max_batch must be at least 1");
        }

        let rd = RelayConfig::default();
        let per_chain = self.relay.per_chain.unwrap_or(1);
        let relay = RelayConfig {
            stats_window: self.relay.stats_window.unwrap_or(rd.stats_window),
            stats_period: self.relay.stats_period.unwrap_or(rd.stats_period),
            poll_interval: self.relay.poll_interval.unwrap_or(rd.poll_interval),
            submit_timeout: self.relay.submit_timeout.unwrap_or(rd.submit_timeout),
            backoff_base: self.relay.backoff_base.unwrap_or(rd.backoff_base),
            backoff_cap: self.relay.backoff_cap.unwrap_or(rd.backoff_cap),
        };
        if relay.stats_window == 0
            || ![relay.stats_period, relay.poll_interval, relay.submit_timeout, relay.backoff_base, relay.backoff_cap]
                .into_iter()
                .all(positive)
        {
            err.top("relay: window must be at least 1 and all periods positive");
        }

        let d = &self.detectors;
        if !(d.breaker_threshold > 0.0 && d.breaker_threshold <= 0.5) {
            err.top(format!(
                "detectors.breaker_threshold must lie in (0, 0.5] (got {})",
                d.breaker_threshold
            ));
        }
        if ![d.sweep_interval, d.heartbeat_timeout, d.eclipse_window, d.ddos_window, d.ddos_k_sigma]
            .into_iter()
            .all(positive)
        {
            err.top("detectors: intervals, windows and ddos_k_sigma must be positive");
        }
        if !(0.0..1.0).contains(&d.selfish_theta) {
            err.top("detectors.selfish_theta must lie in [0, 1)");
        }

        if let Some(m) = &self.finality.model {
            if m != "catch-up-race" {
                err.top(format!("unknown finality model {m:?} (available: catch-up-race)"));
            }
        }

        // chains
        let mut chains = Vec::new();
        let mut floors = Vec::new();
        let mut names = BTreeMap::new();
        if self.chains.is_empty() {
            err.top("scenario defines no [[chain]]");
        }
        for (i, sc) in self.chains.iter().enumerate() {
            let c = sc.get_ref();
            if names.insert(c.name.clone(), ChainId(i as u32)).is_some() {
                err.at(sc, format!("duplicate chain name {:?}", c.name));
            }
            let shares = match (&c.shares, c.miners) {
                (Some(s), None) => s.clone(),
                (None, Some(m)) if m > 0 => vec![1.0 / m as f64; m],
                (Some(s), Some(m)) if s.len() == m => s.clone(),
                (Some(_), Some(_)) => {
                    err.at(sc, format!("chain {:?}: `miners` disagrees with the length of `shares`", c.name));
                    vec![1.0]
                }
                _ => {
                    err.at(sc, format!("chain {:?}: give `miners` (at least 1) or `shares`", c.name));
                    vec![1.0]
                }
            };
            let spec = ChainSpec {
                id: ChainId(i as u32),
                name: c.name.clone(),
                shares,
                block_interval: c.block_interval,
                latency: c.latency.clone().unwrap_or_default(),
                block_capacity: c.block_capacity.unwrap_or(DEFAULT_BLOCK_CAPACITY),
                relays: c.relays.unwrap_or(per_chain),
            };
            if let Err(e) = spec.validate() {
                err.at(sc, e.to_string());
            }
            if spec.relays == 0 {
                err.at(sc, format!("chain {:?}: needs at least one relay node", c.name));
            }
            let floor = c.assumed_adversary.unwrap_or(0.0);
            if !(0.0..=1.0).contains(&floor) {
                err.at(sc, format!("chain {:?}: assumed_adversary must lie in [0,1]", c.name));
            }
            floors.push(floor);
            chains.push(spec);
        }
        let all: Vec<ChainId> = chains.iter().map(|c| c.id).collect();

        // policies: explicit pairs override wildcard entries
        let mut explicit: BTreeMap<(ChainId, ChainId), f64> = BTreeMap::new();
        let mut wildcard: BTreeMap<(ChainId, ChainId), f64> = BTreeMap::new();
        for sp in &self.policies {
            let p = sp.get_ref();
            let epsilon = match (&p.level, p.epsilon) {
                (Some(l), None) => match l.parse::<SecurityLevel>() {
                    Ok(l) => l.epsilon(),
                    Err(m) => {
                        err.at(sp, m);
                        continue;
                    }
                },
                (None, Some(e)) if e > 0.0 && e < 1.0 => e,
                (None, Some(e)) => {
                    err.at(sp, format!("policy epsilon must lie in (0,1) (got {e})"));
                    continue;
                }
                _ => {
                    err.at(sp, "policy needs exactly one of `level` or `epsilon`");
                    continue;
                }
            };
            let sources = if p.source == "*" {
                all.clone()
            } else {
                err.chain(sp, &names, &p.source).into_iter().collect()
            };
            let dests = if p.dest == "*" {
                all.clone()
            } else {
                err.chain(sp, &names, &p.dest).into_iter().collect()
            };
            let target = if p.source == "*" || p.dest == "*" {
                &mut wildcard
            } else {
                &mut explicit
            };
            for s in &sources {
                for d in &dests {
                    if s != d {
                        target.insert((*s, *d), epsilon);
                    } else if p.source != "*" && p.dest != "*" {
                        err.at(sp, format!("policy source and destination are both {:?}", p.source));
                    }
                }
            }
        }
        for (k, v) in explicit {
            wildcard.insert(k, v);
        }
        let policies: Vec<CollaborationPolicy> = wildcard
            .into_iter()
            .map(|((source, dest), epsilon)| CollaborationPolicy { source, dest, epsilon })
            .collect();
        let has_policy = |s: ChainId, d: ChainId| policies.iter().any(|p| p.source == s && p.dest == d);
        let name_of = |id: ChainId| chains[id.index()].name.clone();

        let mut traffic = Vec::new();
        for st in &self.traffic {
            let t = st.get_ref();
            let (Some(source), Some(dest)) = (
                err.chain(st, &names, &t.source),
                err.chain(st, &names, &t.dest),
            ) else {
                continue;
            };
            if source == dest {
                err.at(st, format!("traffic source and destination are both {:?}", t.source));
                continue;
            }
            if !has_policy(source, dest) {
                err.at(
                    st,
                    format!("missing collaboration policy for {} -> {}", name_of(source), name_of(dest)),
                );
            }
            if t.count == 0 || t.interval < 0.0 || t.start < 0.0 {
                err.at(st, "traffic needs count >= 1, start >= 0 and interval >= 0");
            }
            traffic.push(TrafficSpec {
                source,
                dest,
                count: t.count,
                start: t.start,
                interval: t.interval,
                payload_bytes: t.payload_bytes,
            });
        }

        let mut attacks = Vec::new();
        for sa in &self.attacks {
            let a = sa.get_ref();
            let Some(chain) = err.chain(sa, &names, &a.chain) else { continue };
            let stop = a.stop.unwrap_or(f64::INFINITY);
            if !(a.start >= 0.0 && stop > a.start) {
                err.at(sa, "attack needs 0 <= start < stop");
            }
            let dest = match &a.dest {
                Some(d) => err.chain(sa, &names, d),
                None => None,
            };
            match a.kind {
                AttackKind::DoubleSpend => match dest {
                    Some(d) if d != chain => {
                        if !has_policy(chain, d) {
                            err.at(
                                sa,
                                format!("missing collaboration policy for {} -> {}", name_of(chain), name_of(d)),
                            );
                        }
                    }
                    _ => err.at(sa, "double-spend attack needs `dest`, a chain other than its own"),
                },
                AttackKind::Ddos if !a.rate.is_some_and(positive) => {
                    err.at(sa, "ddos attack needs a positive `rate`");
                }
                AttackKind::Eclipse if a.victims.is_empty() => {
                    err.at(sa, "eclipse attack needs `victims`");
                }
                _ => {}
            }
            if a.kind != AttackKind::Eclipse && a.attackers.is_empty() {
                err.at(sa, format!("{} attack needs `attackers`", a.kind.as_str()));
            }
            attacks.push(AttackPlan {
                chain,
                kind: a.kind,
                attackers: a.attackers.iter().map(|n| NodeId(*n)).collect(),
                victims: a.victims.iter().map(|n| NodeId(*n)).collect(),
                start: a.start,
                stop,
                rate: a.rate.unwrap_or(0.0),
                dest,
                give_up_deficit: a.give_up_deficit.unwrap_or(40),
            });
        }
        for spec in &chains {
            let specs: Vec<AttackSpec> = attacks.iter().filter(|a| a.chain == spec.id).map(|a| a.spec()).collect();
            if let Err(e) = crate::chain::check_disjoint(spec.id, spec.miners(), spec.node_count(), &specs) {
                err.top(e.to_string());
            }
        }

        let mut scripts = Vec::new();
        for ss in &self.scripts {
            let s = ss.get_ref();
            if !(s.at >= 0.0) {
                err.at(ss, "script `at` must be >= 0");
            }
            let chain = match &s.chain {
                Some(c) => err.chain(ss, &names, c),
                None => None,
            };
            let need_chain = |err: &mut Errors| {
                if chain.is_none() && s.chain.is_none() {
                    err.at(ss, "script action needs `chain`");
                }
                chain
            };
            let action = match s.action {
                RawAction::CrashRelay | RawAction::RecoverRelay => {
                    let Some(c) = need_chain(&mut err) else { continue };
                    let Some(relay) = s.relay else {
                        err.at(ss, "relay script action needs `relay` (index among the chain's relay nodes)");
                        continue;
                    };
                    if relay >= chains[c.index()].relays {
                        err.at(ss, format!("chain {:?} has no relay #{relay}", name_of(c)));
                        continue;
                    }
                    if s.action == RawAction::CrashRelay {
                        ScriptAction::CrashRelay { chain: c, relay }
                    } else {
                        ScriptAction::RecoverRelay { chain: c, relay }
                    }
                }
                RawAction::CrashNode | RawAction::RecoverNode => {
                    let Some(c) = need_chain(&mut err) else { continue };
                    let Some(node) = s.node.filter(|n| (*n as usize) < chains[c.index()].node_count()) else {
                        err.at(ss, "node script action needs a valid `node`");
                        continue;
                    };
                    if s.action == RawAction::CrashNode {
                        ScriptAction::CrashNode {
                            chain: c,
                            node: NodeId(node),
                        }
                    } else {
                        ScriptAction::RecoverNode {
                            chain: c,
                            node: NodeId(node),
                        }
                    }
                }
                RawAction::CrashConnector | RawAction::RecoverConnector => {
                    let Some(node) = s.node.filter(|n| (*n as usize) < connector.nodes) else {
                        err.at(ss, "connector script action needs a valid `node`");
                        continue;
                    };
                    if s.action == RawAction::CrashConnector {
                        ScriptAction::CrashConnector { node: node as usize }
                    } else {
                        ScriptAction::RecoverConnector { node: node as usize }
                    }
                }
                RawAction::CrashConnectorLeader => ScriptAction::CrashConnectorLeader,
                RawAction::ClearFlags => {
                    let Some(c) = need_chain(&mut err) else { continue };
                    ScriptAction::ClearFlags {
                        chain: c,
                        nodes: s.nodes.as_ref().map(|v| v.iter().map(|n| NodeId(*n)).collect()),
                    }
                }
            };
            scripts.push(ScriptStep { at: s.at, action });
        }

        if !err.items.is_empty() {
            return Err(ValidationErrors(err.items));
        }
        Ok(Scenario {
            seed,
            duration,
            chains,
            assumed_adversary: floors,
            connector,
            relay,
            detectors: self.detectors,
            policies,
            traffic,
            attacks,
            scripts,
            output_dir: self.output.dir,
        })
    }
}

/// Chain pairs that carry scripted traffic.
pub fn traffic_pairs(sc: &Scenario) -> BTreeSet<(ChainId, ChainId)> {
    sc.traffic.iter().map(|t| (t.source, t.dest)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
duration = 100.0

[[chain]]
name = "A"
miners = 2
block_interval = 10.0

[[chain]]
name = "B"
shares = [0.25, 0.75]
block_interval = 5.0

[[policy]]
source = "A"
dest = "B"
level = "MED"
"#;

    #[test]
    fn minimal_two_chain() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(sc.chains.len(), 2);
        assert_eq!(sc.chains[1].shares, vec![0.25, 0.75]);
        assert_eq!(sc.policy(ChainId(0), ChainId(1)).unwrap().epsilon, 1e-3);
        assert_eq!(sc.connector.nodes, 3);
    }

    #[test]
    fn missing_policy_names_the_pair() {
        let text = format!("{MINIMAL}\n[[traffic]]\nsource = \"B\"\ndest = \"A\"\ncount = 3\n");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(e.mentions("missing collaboration policy for B -> A"), "{e}");
        assert_eq!(e.0[0].line, Some(20));
    }

    #[test]
    fn unknown_key_has_line() {
        let text = MINIMAL.replace("miners = 2", "miners = 2\nbogus = 1");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(e.mentions("bogus"), "{e}");
        assert_eq!(e.0[0].line, Some(8));
    }

    #[test]
    fn share_sum_violation() {
        let text = MINIMAL.replace("[0.25, 0.75]", "[0.6, 0.5]");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(e.mentions("sum to 1"), "{e}");
        assert_eq!(e.0[0].line, Some(10));
    }

    #[test]
    fn errors_are_itemized() {
        let text = MINIMAL
            .replace("[0.25, 0.75]", "[0.6, 0.5]")
            .replace("level = \"MED\"", "level = \"med\"");
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert_eq!(e.0.len(), 2, "{e}");
    }

    #[test]
    fn wildcard_policy_expands_and_explicit_wins() {
        let text = MINIMAL.replace("source = \"A\"", "source = \"*\"").replace("dest = \"B\"", "dest = \"*\"")
            + "\n[[policy]]\nsource = \"B\"\ndest = \"A\"\nepsilon = 0.01\n";
        let sc = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc.policies.len(), 2);
        assert_eq!(sc.policy(ChainId(0), ChainId(1)).unwrap().epsilon, 1e-3);
        assert_eq!(sc.policy(ChainId(1), ChainId(0)).unwrap().epsilon, 0.01);
    }

    #[test]
    fn attacks_and_scripts_parse() {
        let text = format!(
            "{MINIMAL}
[[attack]]
chain = \"A\"
kind = \"double-spend\"
attackers = [0]
dest = \"B\"
start = 5.0

[[script]]
at = 50.0
action = \"crash-relay\"
chain = \"A\"
relay = 0

[[script]]
at = 60.0
action = \"crash-connector-leader\"
"
        );
        let sc = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(sc.attacks[0].dest, Some(ChainId(1)));
        assert_eq!(sc.attacks[0].stop, f64::INFINITY);
        assert_eq!(sc.scripts.len(), 2);
    }

    #[test]
    fn double_spend_without_policy_rejected() {
        let text = format!(
            "{MINIMAL}
[[attack]]
chain = \"B\"
kind = \"double-spend\"
attackers = [0]
dest = \"A\"
"
        );
        let e = Scenario::from_toml_str(&text).unwrap_err();
        assert!(e.mentions("B -> A"), "{e}");
    }
}
