use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::Block;
use crate::error::ChainError;
use crate::types::{BlockId, Time};

#[derive(Debug, Clone)]
struct Stored {
    block: Arc<Block>,
    arrival_time: Time,
    arrival_seq: u64,
}

/// Fork-choice key: higher is better. Height first, then earliest local arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rank {
    height: u64,
    arrival_time: Time,
    arrival_seq: u64,
}

impl Rank {
    fn beats(&self, other: &Rank) -> bool {
        if self.height != other.height {
            return self.height > other.height;
        }
        match self.arrival_time.total_cmp(&other.arrival_time) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => self.arrival_seq < other.arrival_seq,
        }
    }
}

/// Result of handing one block to a store.
#[derive(Debug, Clone, Default)]
pub struct InsertOutcome {
    /// Newly stored blocks: the block itself plus any orphans it unlocked.
    pub stored: Vec<Arc<Block>>,
    /// Blocks that joined the best chain, ascending height.
    pub extended: Vec<Arc<Block>>,
    /// Blocks that left the best chain, descending height. Non-empty means a reorg.
    pub pruned: Vec<Arc<Block>>,
    /// Parent unknown; held until it arrives.
    pub orphaned: bool,
    pub duplicate: bool,
}

impl InsertOutcome {
    pub fn is_reorg(&self) -> bool {
        !self.pruned.is_empty()
    }

    pub fn tip_changed(&self) -> bool {
        !self.extended.is_empty()
    }
}

/// One node's view of a chain's block tree.
#[derive(Debug, Clone)]
pub struct BlockStore {
    blocks: HashMap<BlockId, Stored>,
    children: HashMap<BlockId, Vec<BlockId>>,
    orphans: HashMap<BlockId, Vec<Stored>>,
    orphan_ids: HashSet<BlockId>,
    /// Best chain indexed by height.
    best: Vec<BlockId>,
    next_seq: u64,
}

impl BlockStore {
    pub fn new(genesis: Arc<Block>) -> Self {
        assert!(genesis.is_genesis() && genesis.height == 0);
        let id = genesis.id;
        let mut blocks = HashMap::new();
        blocks.insert(
            id,
            Stored {
                block: genesis,
                arrival_time: 0.0,
                arrival_seq: 0,
            },
        );
        Self {
            blocks,
            children: HashMap::new(),
            orphans: HashMap::new(),
            orphan_ids: HashSet::new(),
            best: vec![id],
            next_seq: 1,
        }
    }

    pub fn tip(&self) -> BlockId {
        *self.best.last().expect("genesis always present")
    }

    pub fn tip_block(&self) -> &Arc<Block> {
        &self.blocks[&self.tip()].block
    }

    pub fn tip_height(&self) -> u64 {
        (self.best.len() - 1) as u64
    }

    pub fn genesis(&self) -> BlockId {
        self.best[0]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn orphan_count(&self) -> usize {
        self.orphan_ids.len()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&Arc<Block>> {
        self.blocks.get(&id).map(|s| &s.block)
    }

    pub fn arrival_time(&self, id: BlockId) -> Option<Time> {
        self.blocks.get(&id).map(|s| s.arrival_time)
    }

    pub fn children(&self, id: BlockId) -> &[BlockId] {
        self.children.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Best chain from genesis to tip.
    pub fn best_chain(&self) -> &[BlockId] {
        &self.best
    }

    pub fn is_on_best_chain(&self, id: BlockId) -> bool {
        match self.blocks.get(&id) {
            Some(s) => self.best.get(s.block.height as usize) == Some(&id),
            None => false,
        }
    }

    /// Blocks built on top of `id` along the best chain; `None` when `id` is off it.
    pub fn depth(&self, id: BlockId) -> Result<Option<u64>, ChainError> {
        let stored = self.blocks.get(&id).ok_or(ChainError::UnknownBlock(id))?;
        let h = stored.block.height;
        if self.best.get(h as usize) == Some(&id) {
            Ok(Some(self.tip_height() - h))
        } else {
            Ok(None)
        }
    }

    /// Blocks known to the store but not on the best chain.
    pub fn stale_count(&self) -> usize {
        self.blocks.len() - self.best.len()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values().map(|s| &s.block)
    }

    fn rank(&self, id: BlockId) -> Rank {
        let s = &self.blocks[&id];
        Rank {
            height: s.block.height,
            arrival_time: s.arrival_time,
            arrival_seq: s.arrival_seq,
        }
    }

    pub fn insert(&mut self, block: Arc<Block>, now: Time) -> Result<InsertOutcome, ChainError> {
        let mut out = InsertOutcome::default();
        let id = block.id;
        if self.blocks.contains_key(&id) || self.orphan_ids.contains(&id) {
            out.duplicate = true;
            return Ok(out);
        }
        let Some(parent) = block.parent else {
            return Err(ChainError::InvalidBlock {
                block: id,
                reason: "second genesis",
            });
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        let stored = Stored {
            block,
            arrival_time: now,
            arrival_seq: seq,
        };
        if !self.blocks.contains_key(&parent) {
            self.orphan_ids.insert(id);
            self.orphans.entry(parent).or_default().push(stored);
            out.orphaned = true;
            return Ok(out);
        }

        let mut queue = vec![stored];
        let mut best_new: Option<BlockId> = None;
        while let Some(s) = queue.pop() {
            let b = s.block.clone();
            let p = &self.blocks[&b.parent.expect("non-genesis")].block;
            if b.height != p.height + 1 {
                // an invalid block poisons nothing; its waiting descendants stay orphaned
                if b.id == id {
                    return Err(ChainError::InvalidBlock {
                        block: b.id,
                        reason: "height is not parent height + 1",
                    });
                }
                continue;
            }
            if b.timestamp < p.timestamp {
                if b.id == id {
                    return Err(ChainError::InvalidBlock {
                        block: b.id,
                        reason: "timestamp precedes parent",
                    });
                }
                continue;
            }
            self.orphan_ids.remove(&b.id);
            self.children.entry(p.id).or_default().push(b.id);
            self.blocks.insert(b.id, s);
            out.stored.push(b.clone());
            best_new = match best_new {
                Some(cur) if !self.rank(b.id).beats(&self.rank(cur)) => Some(cur),
                _ => Some(b.id),
            };
            if let Some(waiting) = self.orphans.remove(&b.id) {
                queue.extend(waiting);
            }
        }

        if let Some(cand) = best_new {
            if self.rank(cand).beats(&self.rank(self.tip())) {
                self.switch_to(cand, &mut out);
            }
        }
        Ok(out)
    }

    fn switch_to(&mut self, new_tip: BlockId, out: &mut InsertOutcome) {
        let mut added = Vec::new();
        let mut cur = new_tip;
        loop {
            let b = &self.blocks[&cur].block;
            if self.best.get(b.height as usize) == Some(&cur) {
                break;
            }
            added.push(b.clone());
            cur = b.parent.expect("genesis is always on the best chain");
        }
        let fork_height = self.blocks[&cur].block.height as usize;
        for pruned in self.best.drain(fork_height + 1..).rev() {
            out.pruned.push(self.blocks[&pruned].block.clone());
        }
        added.reverse();
        self.best.extend(added.iter().map(|b| b.id));
        out.extended = added;
    }
}

/// Recomputes the best tip from scratch; agrees with [`BlockStore::tip`].
pub fn fork_choice(store: &BlockStore) -> BlockId {
    let mut best = store.genesis();
    for id in store.blocks.keys() {
        if store.rank(*id).beats(&store.rank(best)) {
            best = *id;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NodeId;
    use proptest::prelude::*;

    fn blk(id: u64, parent: u64, height: u64, t: f64) -> Arc<Block> {
        Arc::new(Block {
            id: BlockId(id),
            parent: Some(BlockId(parent)),
            height,
            miner: NodeId(0),
            timestamp: t,
            txs: vec![],
        })
    }

    fn store() -> BlockStore {
        BlockStore::new(Arc::new(Block::genesis(BlockId(0))))
    }

    #[test]
    fn linear_chain_tip_is_last() {
        let mut s = store();
        s.insert(blk(1, 0, 1, 1.0), 1.0).unwrap();
        s.insert(blk(2, 1, 2, 2.0), 2.0).unwrap();
        assert_eq!(s.tip(), BlockId(2));
        assert_eq!(fork_choice(&s), BlockId(2));
        assert_eq!(s.depth(BlockId(2)).unwrap(), Some(0));
        assert_eq!(s.depth(BlockId(1)).unwrap(), Some(1));
    }

    #[test]
    fn equal_heights_keep_first_received() {
        let mut s = store();
        // branch A: 1 -> 2 ; branch B: 11 -> 12, received later
        s.insert(blk(1, 0, 1, 1.0), 1.0).unwrap();
        s.insert(blk(2, 1, 2, 2.0), 2.0).unwrap();
        s.insert(blk(11, 0, 1, 1.5), 3.0).unwrap();
        let out = s.insert(blk(12, 11, 2, 2.5), 3.5).unwrap();
        assert!(!out.tip_changed());
        assert_eq!(s.tip(), BlockId(2));
    }

    #[test]
    fn longer_branch_triggers_reorg() {
        let mut s = store();
        s.insert(blk(1, 0, 1, 1.0), 1.0).unwrap();
        s.insert(blk(2, 1, 2, 2.0), 2.0).unwrap();
        s.insert(blk(11, 0, 1, 1.5), 3.0).unwrap();
        s.insert(blk(12, 11, 2, 2.5), 3.5).unwrap();
        let out = s.insert(blk(13, 12, 3, 4.0), 4.0).unwrap();
        assert!(out.is_reorg());
        let pruned: Vec<_> = out.pruned.iter().map(|b| b.id.0).collect();
        let added: Vec<_> = out.extended.iter().map(|b| b.id.0).collect();
        assert_eq!(pruned, vec![2, 1]);
        assert_eq!(added, vec![11, 12, 13]);
        assert_eq!(s.depth(BlockId(1)).unwrap(), None);
        assert_eq!(s.depth(BlockId(11)).unwrap(), Some(2));
    }

    #[test]
    fn depth_counts_blocks_on_top() {
        let mut s = store();
        for h in 1..=10 {
            s.insert(blk(h, h - 1, h, h as f64), h as f64).unwrap();
        }
        assert_eq!(s.depth(BlockId(4)).unwrap(), Some(6));
        assert!(matches!(s.depth(BlockId(99)), Err(ChainError::UnknownBlock(_))));
    }

    #[test]
    fn orphans_connect_when_parent_arrives() {
        let mut s = store();
        let o = s.insert(blk(2, 1, 2, 2.0), 1.0).unwrap();
        assert!(o.orphaned);
        assert_eq!(s.tip(), BlockId(0));
        let out = s.insert(blk(1, 0, 1, 1.0), 2.0).unwrap();
        assert_eq!(out.stored.len(), 2);
        assert_eq!(s.tip(), BlockId(2));
        assert_eq!(s.orphan_count(), 0);
    }

    #[test]
    fn duplicate_is_flagged() {
        let mut s = store();
        s.insert(blk(1, 0, 1, 1.0), 1.0).unwrap();
        assert!(s.insert(blk(1, 0, 1, 1.0), 2.0).unwrap().duplicate);
    }

    #[test]
    fn bad_height_rejected() {
        let mut s = store();
        assert!(s.insert(blk(1, 0, 5, 1.0), 1.0).is_err());
    }

    proptest! {
        // Random tree built in random arrival order: incremental tip matches full
        // scan, best chain heights are consecutive and parent-linked.
        #[test]
        fn incremental_matches_scan(parents in proptest::collection::vec(0usize..1000, 1..60),
                                    order_seed in any::<u64>()) {
            let mut heights = vec![0u64];
            let mut blocks = Vec::new();
            for (i, p) in parents.iter().enumerate() {
                let parent = p % (i + 1);
                let h = heights[parent] + 1;
                heights.push(h);
                blocks.push(blk(i as u64 + 1, parent as u64, h, h as f64));
            }
            // deterministic shuffle
            let mut x = order_seed | 1;
            for i in (1..blocks.len()).rev() {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                blocks.swap(i, (x as usize) % (i + 1));
            }
            let mut s = store();
            for (t, b) in blocks.into_iter().enumerate() {
                s.insert(b, t as f64).unwrap();
                prop_assert_eq!(s.tip(), fork_choice(&s));
            }
            prop_assert_eq!(s.orphan_count(), 0);
            let chain = s.best_chain();
            for (h, id) in chain.iter().enumerate() {
                let b = s.get(*id).unwrap();
                prop_assert_eq!(b.height as usize, h);
                if h > 0 {
                    prop_assert_eq!(b.parent, Some(chain[h - 1]));
                }
            }
        }
    }
}
