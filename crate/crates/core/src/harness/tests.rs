use super::*;
use crate::types::{ChainId, NodeId};

fn two_chain(seed: u64, count: u32) -> String {
    format!(
        r#"
seed = {seed}
duration = 900.0

[[chain]]
name = "A"
miners = 4
block_interval = 5.0

[[chain]]
name = "B"
miners = 4
block_interval = 5.0

[[policy]]
source = "*"
dest = "*"
level = "LOW"

[[traffic]]
source = "A"
dest = "B"
count = {count}
start = 5.0
interval = 2.0

[[traffic]]
source = "B"
dest = "A"
count = {count}
start = 6.0
interval = 2.0
"#
    )
}

#[test]
fn honest_run_delivers_everything() {
    let sc = Scenario::from_toml_str(&two_chain(3, 100)).unwrap();
    let r = run(&sc).unwrap();
    let t = r.transfers;
    assert_eq!(t.created, 200);
    assert_eq!(t.observed, 200, "{t:?}");
    assert_eq!(t.delivered, 200, "{t:?}");
    assert_eq!(t.dropped, 0);
    assert_eq!(t.ledger_len, 200);
    assert_eq!(t.reversals_after_delivery, 0);
    assert!(r.flags.is_empty(), "{:?}", r.flags);
    assert!(r.latency.mean > 0.0);
}

#[test]
fn artifacts_are_deterministic() {
    let sc = Scenario::from_toml_str(&two_chain(11, 20)).unwrap();
    let a = run(&sc).unwrap();
    let b = run(&sc).unwrap();
    assert_eq!(a.metrics_csv(), b.metrics_csv());
    assert_eq!(a.transfers_csv(), b.transfers_csv());
    assert_eq!(a.ledger_csv(), b.ledger_csv());
    assert_eq!(a.flags_csv(), b.flags_csv());
    assert_eq!(a.summary_json(), b.summary_json());
    let mut other = sc.clone();
    other.seed = 12;
    assert_ne!(run(&other).unwrap().transfers_csv(), a.transfers_csv());
}

#[test]
fn transition_log_is_legal() {
    let sc = Scenario::from_toml_str(&two_chain(5, 30)).unwrap();
    let r = run(&sc).unwrap();
    check_transitions(&r.transitions).unwrap();
    let delivered = r
        .transitions
        .iter()
        .filter(|t| t.to == crate::relay::TransferState::Delivered)
        .count();
    assert_eq!(delivered, 60);
}

#[test]
fn crash_silenced_majority_trips_breaker() {
    let text = two_chain(7, 40).replace("miners = 4\nblock_interval = 5.0\n\n[[chain]]", "shares = [0.2, 0.14, 0.33, 0.33]\nblock_interval = 5.0\n\n[[chain]]")
        + r#"
[[attack]]
chain = "A"
kind = "crash-silence"
attackers = [0, 1]
start = 30.0
"#;
    let sc = Scenario::from_toml_str(&text).unwrap();
    let r = run(&sc).unwrap();
    assert_eq!(r.breakers.len(), 1, "{:?}", r.flags);
    let ep = &r.breakers[0];
    let applied = ep.applied_open.expect("breaker applied");
    assert!(ep.decided_close.is_none());
    let late = r
        .ledger
        .iter()
        .filter(|e| e.record.source == ChainId(0) && e.seq > applied.ledger_len)
        .count();
    assert_eq!(late, 0);
    assert!(r.chains[0].breaker_open);
    assert!(r.first_flag(ChainId(0), NodeId(0), "unresponsive").is_some());
    // traffic the other way is unaffected
    let b_to_a = r.ledger.iter().filter(|e| e.record.source == ChainId(1)).count();
    assert_eq!(b_to_a, 40);
}

#[test]
fn relay_and_leader_crash_keep_exactly_once() {
    let text = two_chain(9, 60).replace("[[policy]]", "[relay]\nper_chain = 2\n\n[[policy]]")
        + r#"
[[script]]
at = 40.0
action = "crash-relay"
chain = "A"
relay = 0

[[script]]
at = 60.0
action = "crash-connector-leader"
"#;
    let sc = Scenario::from_toml_str(&text).unwrap();
    let r = run(&sc).unwrap();
    assert_eq!(r.transfers.delivered, 120, "{:?}", r.transfers);
    assert_eq!(r.deliveries.len(), 120);
}

#[test]
fn batch_uses_consecutive_seeds() {
    let sc = Scenario::from_toml_str(&two_chain(100, 5)).unwrap();
    let b = run_batch(&sc, 3).unwrap();
    assert_eq!(b.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![100, 101, 102]);
    assert_eq!(b.total(|r| r.delivered), 30);
    assert!(b.trials_csv().lines().count() == 4);
}
