//! Mini-batch composition and training cycles.
//!
//! Training draws from one or more groups of blocks (for the scene classifier:
//! general, urban and bridge), each contributing a fixed quota to every
//! mini-batch. A *cycle* loads one block per group, shuffles each, and emits
//! mini-batches drawing each group's quota without replacement until one of
//! the loaded blocks has been fully seen; the batch that exhausts a block is
//! topped up from the start of that block's shuffled order so every batch
//! keeps its exact composition. Residual samples of larger blocks stay unseen
//! that cycle. Each group walks its blocks in a fresh random order per pass,
//! so a group of `n` blocks loads every block once every `n` cycles.

use rand::seq::SliceRandom;

use super::blocks::DataBlock;
use super::sample::{Category, Sample};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

/// Scene classifier quota: 4 general, 4 urban, 2 bridge.
pub const SCENE_COMPOSITION: [(Category, usize); 3] =
    [(Category::General, 4), (Category::Urban, 4), (Category::Bridge, 2)];

/// Component classifier batch size.
pub const COMPONENT_BATCH: usize = 10;

/// Position of one sample: group, block within the group, sample within the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub group: usize,
    pub block: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
struct Group {
    sizes: Vec<usize>,
    quota: usize,
}

/// Deterministic batch schedule over groups of blocks.
#[derive(Clone, Debug)]
pub struct BatchPlanner {
    groups: Vec<Group>,
    seed: u64,
}

impl BatchPlanner {
    /// `groups[g]` lists the block sizes of group `g`, which contributes
    /// `quota` samples per batch.
    pub fn new(groups: Vec<(Vec<usize>, usize)>, seed: u64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("no training blocks".into()));
        }
        for (sizes, quota) in &groups {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::Config("every batch group needs non-empty blocks".into()));
            }
            if *quota == 0 {
                return Err(Error::Config("batch quota must be positive".into()));
            }
        }
        Ok(Self {
            groups: groups
                .into_iter()
                .map(|(sizes, quota)| Group { sizes, quota })
                .collect(),
            seed,
        })
    }

    /// Scene-classifier planner over general, urban and bridge training blocks.
    pub fn scene(
        general: &[DataBlock],
        urban: &[DataBlock],
        bridge: &[DataBlock],
        seed: u64,
    ) -> Result<Self> {
        let sizes = |b: &[DataBlock]| b.iter().map(|b| b.len()).collect::<Vec<_>>();
        Self::new(
            vec![
                (sizes(general), SCENE_COMPOSITION[0].1),
                (sizes(urban), SCENE_COMPOSITION[1].1),
                (sizes(bridge), SCENE_COMPOSITION[2].1),
            ],
            seed,
        )
    }

    /// Component-classifier planner: every batch comes from one group.
    pub fn single(blocks: &[DataBlock], batch: usize, seed: u64) -> Result<Self> {
        Self::new(vec![(blocks.iter().map(|b| b.len()).collect(), batch)], seed)
    }

    pub fn batch_size(&self) -> usize {
        self.groups.iter().map(|g| g.quota).sum()
    }

    /// Block that group `g` loads in cycle `cycle`.
    fn block_for(&self, g: usize, cycle: u64) -> usize {
        let n = self.groups[g].sizes.len() as u64;
        let mut order: Vec<usize> = (0..n as usize).collect();
        order.shuffle(&mut stream(self.seed, &[purpose::SHUFFLE, cycle / n, g as u64]));
        order[(cycle % n) as usize]
    }

    /// Every mini-batch of cycle `cycle` (0-based), in order.
    pub fn cycle(&self, cycle: u64) -> Vec<Vec<SampleRef>> {
        let mut rng = stream(self.seed, &[purpose::SHUFFLE, cycle]);
        let loaded: Vec<(usize, Vec<usize>)> = (0..self.groups.len())
            .map(|g| {
                let block = self.block_for(g, cycle);
                let mut perm: Vec<usize> = (0..self.groups[g].sizes[block]).collect();
                perm.shuffle(&mut rng);
                (block, perm)
            })
            .collect();
        let n_batches = self
            .groups
            .iter()
            .zip(&loaded)
            .map(|(g, (_, perm))| perm.len().div_ceil(g.quota))
            .min()
            .expect("non-empty");
        (0..n_batches)
            .map(|b| {
                let mut batch = Vec::with_capacity(self.batch_size());
                for (gi, (g, (block, perm))) in self.groups.iter().zip(&loaded).enumerate() {
                    for k in 0..g.quota {
                        batch.push(SampleRef {
                            group: gi,
                            block: *block,
                            index: perm[(b * g.quota + k) % perm.len()],
                        });
                    }
                }
                batch
            })
            .collect()
    }
}

/// Resolve sample references against the groups of blocks they index.
pub fn resolve<'a>(groups: &[&'a [DataBlock]], batch: &[SampleRef]) -> Vec<&'a Sample> {
    batch
        .iter()
        .map(|r| &groups[r.group][r.block].samples[r.index])
        .collect()
}

/// One scene mini-batch drawn from single general, urban and bridge blocks
/// (the first batch of cycle 0).
pub fn compose_minibatch<'a>(
    general: &'a DataBlock,
    urban: &'a DataBlock,
    bridge: &'a DataBlock,
    seed: u64,
) -> Result<Vec<&'a Sample>> {
    let planner = BatchPlanner::new(
        vec![
            (vec![general.len()], SCENE_COMPOSITION[0].1),
            (vec![urban.len()], SCENE_COMPOSITION[1].1),
            (vec![bridge.len()], SCENE_COMPOSITION[2].1),
        ],
        seed,
    )?;
    let batch = planner.cycle(0).swap_remove(0);
    let blocks = [
        std::slice::from_ref(general),
        std::slice::from_ref(urban),
        std::slice::from_ref(bridge),
    ];
    Ok(resolve(&blocks, &batch))
}

/// `(general, urban, bridge)` counts of a batch.
pub fn composition(batch: &[&Sample]) -> (usize, usize, usize) {
    let n = |c| batch.iter().filter(|s| s.category == c).count();
    (n(Category::General), n(Category::Urban), n(Category::Bridge))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_block_cycle_sees_everything_once_per_quota() {
        let p = BatchPlanner::new(vec![(vec![23], 10)], 4).unwrap();
        let batches = p.cycle(0);
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| b.len() == 10));
        let seen: HashSet<usize> = batches.iter().flatten().map(|r| r.index).collect();
        assert_eq!(seen.len(), 23);
    }

    #[test]
    fn round_ends_when_smallest_block_is_seen() {
        let p = BatchPlanner::new(vec![(vec![40], 4), (vec![12], 4), (vec![100], 2)], 0).unwrap();
        let batches = p.cycle(0);
        assert_eq!(batches.len(), 3);
        for b in &batches {
            let counts: Vec<usize> = (0..3).map(|g| b.iter().filter(|r| r.group == g).count()).collect();
            assert_eq!(counts, vec![4, 4, 2]);
        }
        let urban: HashSet<usize> = batches.iter().flatten().filter(|r| r.group == 1).map(|r| r.index).collect();
        assert_eq!(urban.len(), 12);
    }

    #[test]
    fn consecutive_cycles_rotate_through_blocks() {
        let p = BatchPlanner::new(vec![(vec![8, 8, 8], 4), (vec![8], 4), (vec![4, 4], 2)], 9).unwrap();
        for pass in 0..3u64 {
            let blocks: Vec<usize> = (pass * 3..pass * 3 + 3)
                .map(|c| {
                    let batches = p.cycle(c);
                    assert_eq!(batches.len(), 2);
                    let used: HashSet<usize> =
                        batches.iter().flatten().filter(|r| r.group == 0).map(|r| r.block).collect();
                    assert_eq!(used.len(), 1, "one block per group per cycle");
                    *used.iter().next().unwrap()
                })
                .collect();
            let distinct: HashSet<usize> = blocks.iter().copied().collect();
            assert_eq!(distinct.len(), 3, "pass {pass} loaded {blocks:?}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_cycle() {
        let p = BatchPlanner::new(vec![(vec![30, 17], 4), (vec![25], 4), (vec![9], 2)], 11).unwrap();
        assert_eq!(p.cycle(2), p.cycle(2));
        assert_ne!(p.cycle(2), p.cycle(3));
        let q = BatchPlanner::new(vec![(vec![30, 17], 4), (vec![25], 4), (vec![9], 2)], 12).unwrap();
        assert_ne!(p.cycle(2), q.cycle(2));
    }

    #[test]
    fn tiny_blocks_still_fill_quota() {
        let p = BatchPlanner::new(vec![(vec![1], 2)], 0).unwrap();
        assert_eq!(p.cycle(0), vec![vec![SampleRef { group: 0, block: 0, index: 0 }; 2]]);
    }

    #[test]
    fn empty_input_is_a_config_error() {
        assert!(matches!(BatchPlanner::new(vec![], 0), Err(Error::Config(_))));
        assert!(matches!(BatchPlanner::new(vec![(vec![], 2)], 0), Err(Error::Config(_))));
    }
}
