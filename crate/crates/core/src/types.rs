use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_newtype {
    ($(#[$m:meta])* $name:ident($inner:ty), $prefix:literal) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_newtype!(
    /// Index of a sub-blockchain within a run.
    ChainId(u32),
    "chain"
);
id_newtype!(
    /// Surrogate for a block hash; unique across all chains in a run.
    BlockId(u64),
    "b"
);
id_newtype!(
    /// Unique across all chains in a run.
    TxId(u64),
    "tx"
);
id_newtype!(
    /// Index of a node within its chain. Miners come first, then relay nodes.
    NodeId(u32),
    "n"
);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ChainId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Virtual seconds.
pub type Time = f64;
