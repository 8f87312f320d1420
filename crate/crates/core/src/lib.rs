//! Deterministic simulation of proof-of-work sub-blockchains exchanging
//! inter-chain transactions through relay nodes, a replicated ordered ledger
//! and a finality module that decides how deep a transaction must be buried
//! before it is executed on its destination chain.
//!
//! Module map:
//! - [`kernel`]: virtual-time scheduler and labeled random streams
//! - [`chain`]: PoW chains, gossip, fork choice and attacker behaviours
//! - [`finality`]: reversal probability, confirmation depth, finality table
//! - [`connector`]: crash-fault-tolerant replicated ledger
//! - [`relay`]: per-chain relay nodes and transfer maturity
//! - [`sentinel`]: attack detectors, adversary estimate, circuit breaker
//! - [`harness`]: scenario files, wiring, metrics and artifacts

pub mod chain;
pub mod connector;
pub mod error;
pub mod finality;
pub mod harness;
pub mod kernel;
pub mod relay;
pub mod sentinel;
pub mod types;

pub use error::{Error, Result};
pub use types::{BlockId, ChainId, NodeId, Time, TxId};
