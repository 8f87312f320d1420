//! Run results and the artifact files written from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::chain::DoubleSpendOutcome;
use crate::connector::{BreakerApplied, LedgerEntry};
use crate::error::Error;
use crate::finality::{TableEntry, TableStatus};
use crate::relay::Transition;
use crate::types::{ChainId, NodeId, Time, TxId};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMetrics {
    pub chain: ChainId,
    pub name: String,
    pub blocks_mined: u64,
    pub best_height: u64,
    pub stale_blocks: u64,
    pub t_hat: Option<f64>,
    pub q_est: f64,
    pub flagged: usize,
    pub blacklisted: usize,
    pub breaker_open: bool,
}

/// One line of the flag and breaker audit log. Breaker rows carry no node.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagRow {
    pub time: Time,
    pub chain: ChainId,
    pub node: Option<NodeId>,
    pub reason: String,
    pub q_est: f64,
    pub breaker_open: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakerEpisode {
    pub chain: ChainId,
    pub episode: u64,
    pub decided_open: Time,
    pub applied_open: Option<BreakerApplied>,
    pub decided_close: Option<Time>,
    pub applied_close: Option<BreakerApplied>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleSpendRecord {
    pub chain: ChainId,
    pub dest: ChainId,
    pub victim: TxId,
    pub outcome: Option<DoubleSpendOutcome>,
    pub delivered: bool,
    /// Delivered, and absent from the source chain's final best chain.
    pub reverted: bool,
}

/// Inter-chain transactions seen by at least one relay node, by final state.
/// `delivered + committed + pending + dropped == observed`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransferCounts {
    pub created: u64,
    pub observed: u64,
    pub delivered: u64,
    /// On the ledger but not yet injected at the destination.
    pub committed: u64,
    pub pending: u64,
    pub dropped: u64,
    pub ledger_len: u64,
    pub reversals_after_delivery: u64,
    pub reverted_after_maturity: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p50: q(0.5),
            p95: q(0.95),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub seed: u64,
    pub duration: f64,
    pub events: u64,
    pub chains: Vec<ChainMetrics>,
    pub transfers: TransferCounts,
    pub latency: LatencySummary,
    pub flags: Vec<FlagRow>,
    pub breakers: Vec<BreakerEpisode>,
    pub double_spends: Vec<DoubleSpendRecord>,
    pub transitions: Vec<Transition>,
    pub ledger: Vec<LedgerEntry>,
    /// Destination injection time per delivered transaction.
    pub deliveries: BTreeMap<TxId, Time>,
    pub finality: Vec<TableEntry>,
}

impl RunReport {
    pub fn chain_name(&self, c: ChainId) -> &str {
        &self.chains[c.index()].name
    }

    pub fn first_flag(&self, chain: ChainId, node: NodeId, reason: &str) -> Option<Time> {
        self.flags
            .iter()
            .find(|f| f.chain == chain && f.node == Some(node) && f.reason == reason)
            .map(|f| f.time)
    }

    pub fn flags_with(&self, reason: &str) -> impl Iterator<Item = &FlagRow> + '_ {
        let reason = reason.to_owned();
        self.flags.iter().filter(move |f| f.reason == reason)
    }

    pub fn summary_json(&self) -> Value {
        let chains: Vec<Value> = self
            .chains
            .iter()
            .map(|c| {
                json!({
                    "chain": c.chain.0,
                    "name": c.name,
                    "blocks_mined": c.blocks_mined,
                    "best_height": c.best_height,
                    "stale_blocks": c.stale_blocks,
                    "t_hat": c.t_hat.map(num),
                    "q_est": num(c.q_est),
                    "flagged": c.flagged,
                    "blacklisted": c.blacklisted,
                    "breaker_open": c.breaker_open,
                })
            })
            .collect();
        let t = &self.transfers;
        let breakers: Vec<Value> = self
            .breakers
            .iter()
            .map(|b| {
                json!({
                    "chain": b.chain.0,
                    "episode": b.episode,
                    "decided_open": num(b.decided_open),
                    "applied_open": b.applied_open.map(|a| num(a.at)),
                    "decided_close": b.decided_close.map(num),
                    "applied_close": b.applied_close.map(|a| num(a.at)),
                })
            })
            .collect();
        let ds: Vec<Value> = self
            .double_spends
            .iter()
            .map(|d| {
                json!({
                    "chain": d.chain.0,
                    "dest": d.dest.0,
                    "victim": d.victim.0,
                    "outcome": d.outcome.map(outcome_str),
                    "delivered": d.delivered,
                    "reverted": d.reverted,
                })
            })
            .collect();
        let mut reasons: BTreeMap<&str, u64> = BTreeMap::new();
        for f in self.flags.iter().filter(|f| f.node.is_some()) {
            *reasons.entry(f.reason.as_str()).or_default() += 1;
        }
        json!({
            "seed": self.seed,
            "duration": num(self.duration),
            "events": self.events,
            "chains": chains,
            "transfers": {
                "created": t.created,
                "observed": t.observed,
                "delivered": t.delivered,
                "committed": t.committed,
                "pending": t.pending,
                "dropped": t.dropped,
                "ledger_len": t.ledger_len,
                "reversals_after_delivery": t.reversals_after_delivery,
                "reverted_after_maturity": t.reverted_after_maturity,
            },
            "delivery_latency": {
                "count": self.latency.count,
                "mean": num(self.latency.mean),
                "p50": num(self.latency.p50),
                "p95": num(self.latency.p95),
                "max": num(self.latency.max),
            },
            "flags": reasons,
            "breaker_episodes": breakers,
            "double_spends": ds,
        })
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("chain,name,blocks_mined,best_height,stale_blocks,t_hat,q_est,flagged,blacklisted,breaker_open\n");
        for c in &self.chains {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                c.chain.0,
                c.name,
                c.blocks_mined,
                c.best_height,
                c.stale_blocks,
                c.t_hat.map(fmt9).unwrap_or_default(),
                fmt9(c.q_est),
                c.flagged,
                c.blacklisted,
                c.breaker_open
            );
        }
        s
    }

    pub fn transfers_csv(&self) -> String {
        let mut s = String::from("time,chain,relay,tx,from,to,depth,z\n");
        for t in &self.transitions {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                fmt9(t.time),
                t.chain.0,
                t.relay.0,
                t.tx.0,
                t.from.map(|f| f.as_str()).unwrap_or(""),
                t.to.as_str(),
                t.depth.map(|d| d.to_string()).unwrap_or_default(),
                t.z.map(|z| z.to_string()).unwrap_or_default()
            );
        }
        s
    }

    pub fn ledger_csv(&self) -> String {
        let mut s = String::from("seq,tx,source,dest,origin_block,matured_at,committed_at,delivered_at\n");
        for e in &self.ledger {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                e.seq,
                e.record.tx_id.0,
                e.record.source.0,
                e.record.dest.0,
                e.record.origin_block.0,
                fmt9(e.record.matured_at),
                fmt9(e.committed_at),
                self.deliveries.get(&e.record.tx_id).map(|t| fmt9(*t)).unwrap_or_default()
            );
        }
        s
    }

    pub fn flags_csv(&self) -> String {
        let mut s = String::from("time,chain,node,reason,q_est,breaker\n");
        for f in &self.flags {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt9(f.time),
                f.chain.0,
                f.node.map(|n| n.0.to_string()).unwrap_or_default(),
                f.reason,
                fmt9(f.q_est),
                if f.breaker_open { "open" } else { "closed" }
            );
        }
        s
    }

    pub fn finality_csv(&self) -> String {
        let mut s = String::from("source,dest,epsilon,q,block_interval,z,advisory_seconds,status\n");
        for e in &self.finality {
            let (q, t) = e.inputs.map_or((String::new(), String::new()), |i| (fmt9(i.q), fmt9(i.block_interval)));
            let (z, wait, status) = match e.status {
                TableStatus::Ready {
                    confirmations,
                    advisory_wait,
                } => (confirmations.to_string(), fmt9(advisory_wait), "ready"),
                TableStatus::Halted => (String::new(), String::new(), "halted"),
                TableStatus::MissingStats => (String::new(), String::new(), "missing-stats"),
            };
            let _ = writeln!(s, "{},{},{},{q},{t},{z},{wait},{status}", e.source.0, e.dest.0, fmt9(e.epsilon));
        }
        s
    }

    /// Writes every artifact into `dir` (created if needed).
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>, Error> {
        let files = [
            ("metrics.csv", self.metrics_csv()),
            ("transfers.csv", self.transfers_csv()),
            ("ledger.csv", self.ledger_csv()),
            ("flags.csv", self.flags_csv()),
            ("finality.csv", self.finality_csv()),
            ("summary.json", pretty(&self.summary_json())),
        ];
        write_files(dir, &files)
    }
}

pub(crate) fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>, Error> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub(crate) fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

pub fn outcome_str(o: DoubleSpendOutcome) -> &'static str {
    match o {
        DoubleSpendOutcome::Succeeded { .. } => "succeeded",
        DoubleSpendOutcome::GaveUp { .. } => "gave-up",
        DoubleSpendOutcome::Expired { .. } => "expired",
    }
}

/// JSON number rounded to nine significant digits; null when not finite.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = fmt9(x).parse().expect("fmt9 output parses");
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

/// `%.9g`: nine significant digits, trailing zeros removed, scientific
/// notation outside `1e-4 <= |x| < 1e9`.
pub fn fmt9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt9_matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.000123456789123, "0.000123456789"),
            (0.0000123, "1.23e-05"),
            (9.9999999999, "10"),
            (1e-15, "1e-15"),
            (50.0, "50"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt9(x), want, "{x}");
        }
        assert_eq!(fmt9(f64::NAN), "nan");
    }

    #[test]
    fn json_numbers_are_rounded() {
        assert_eq!(num(1.0 / 3.0).to_string(), "0.333333333");
        assert_eq!(num(f64::INFINITY), Value::Null);
        assert_eq!(num(2.0).to_string(), "2.0");
    }

    #[test]
    fn latency_summary_quantiles() {
        let s = LatencySummary::from_samples(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.count, s.mean, s.p50, s.max), (5, 3.0, 3.0, 5.0));
        assert_eq!(LatencySummary::from_samples(&[]).count, 0);
    }
}
