use thiserror::Error;

use crate::types::{BlockId, ChainId, TxId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("cannot schedule at t={at} (now={now})")]
    InPast { at: f64, now: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("chain {chain}: hash-power shares must each lie in [0,1] and sum to 1 (sum={sum})")]
    InvalidShares { chain: String, sum: f64 },
    #[error("chain {chain}: block interval must be positive (got {interval})")]
    InvalidInterval { chain: String, interval: f64 },
    #[error("chain {chain}: invalid latency model: {reason}")]
    InvalidLatency { chain: String, reason: String },
    #[error("chain {chain}: block capacity must be at least 1")]
    InvalidCapacity { chain: String },
    #[error("block {block} rejected: {reason}")]
    InvalidBlock { block: BlockId, reason: &'static str },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("duplicate transaction {0}")]
    DuplicateTx(TxId),
    #[error("attacker miner {miner} on chain {chain} already belongs to another active attack")]
    OverlappingAttackers { chain: ChainId, miner: u32 },
    #[error("attack references miner {miner} but chain {chain} has {count} miners")]
    UnknownMiner { chain: ChainId, miner: u32, count: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinalityError {
    #[error("adversary fraction must lie in [0,1] (got {0})")]
    InvalidFraction(f64),
    #[error("epsilon must lie in (0,1) (got {0})")]
    InvalidEpsilon(f64),
    #[error("block interval must be positive (got {0})")]
    InvalidInterval(f64),
    #[error("no finite confirmation depth: adversary fraction {q} >= 0.5")]
    NoFiniteDepth { q: f64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConnectorError {
    #[error("connector did not acknowledge within the timeout")]
    Timeout,
    #[error("no live connector node")]
    Unavailable,
}

/// A runtime invariant that failed during a simulation.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invariant violated: {name}: {detail}")]
pub struct InvariantViolation {
    pub name: &'static str,
    pub detail: String,
}

impl InvariantViolation {
    pub fn new(name: &'static str, detail: impl Into<String>) -> Self {
        Self {
            name,
            detail: detail.into(),
        }
    }
}

/// One itemized scenario validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationItem {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ValidationItem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<ValidationItem>);

impl std::fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} validation error(s)", self.0.len())?;
        for item in &self.0 {
            write!(f, "\n  {item}")?;
        }
        Ok(())
    }
}

impl ValidationErrors {
    pub fn single(line: Option<usize>, message: impl Into<String>) -> Self {
        Self(vec![ValidationItem {
            line,
            message: message.into(),
        }])
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|i| i.message.contains(needle))
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationErrors),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Finality(#[from] FinalityError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
