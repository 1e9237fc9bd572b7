//! Merge-and-reduce tree over fixed-capacity leaf buckets.
//!
//! Leaves are either sealed (exactly `B` points), the single hot bucket (0..=B points) or free
//! (empty). Every node stores the black-box reduction of its children's merged contents; leaves
//! reduce their raw points. Mutations only mark leaves dirty and [`MnrTree::flush`] recomputes
//! the dirty leaves and their ancestors.

use std::collections::{BTreeSet, HashMap};

use crate::builders::BlackBox;
use crate::data::{ParamBall, WeightedPoint};
use crate::error::Result;
use crate::loss::LossModel;
use crate::robust::node_seed;

/// Where an id sits inside the leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub leaf: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlushStats {
    pub nodes: usize,
    pub raw_points: usize,
}

#[derive(Debug, Clone)]
pub struct MnrTree {
    bucket: usize,
    leaves: Vec<Vec<u64>>,
    sealed: Vec<bool>,
    sealed_stack: Vec<usize>,
    hot: usize,
    /// `nodes[level][i]`; level 0 holds leaf reductions, the last level the root.
    nodes: Vec<Vec<Vec<WeightedPoint>>>,
    dirty: Vec<BTreeSet<usize>>,
    slots: HashMap<u64, Slot>,
    eps_level: f64,
    seed: u64,
}

/// `⌈log₂(capacity/B)⌉ + 1`, at least 1.
pub fn budget_height(capacity: usize, bucket: usize) -> usize {
    let leaves = capacity.div_ceil(bucket.max(1)).max(1);
    leaves.next_power_of_two().trailing_zeros() as usize + 1
}

impl MnrTree {
    pub fn new(bucket: usize, height: usize, eps_level: f64, seed: u64) -> Self {
        let leaf_count = 1usize << (height.max(1) - 1);
        let mut nodes = Vec::new();
        let mut width = leaf_count;
        loop {
            nodes.push(vec![Vec::new(); width]);
            if width == 1 {
                break;
            }
            width /= 2;
        }
        MnrTree {
            bucket,
            leaves: vec![Vec::new(); leaf_count],
            sealed: vec![false; leaf_count],
            sealed_stack: Vec::new(),
            hot: 0,
            dirty: vec![BTreeSet::new(); nodes.len()],
            nodes,
            slots: HashMap::new(),
            eps_level,
            seed,
        }
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket
    }

    /// Live height: number of levels including the leaves.
    pub fn height(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slots.contains_key(&id)
    }

    pub fn slot_of(&self, id: u64) -> Option<Slot> {
        self.slots.get(&id).copied()
    }

    pub fn hot_leaf(&self) -> usize {
        self.hot
    }

    pub fn leaf(&self, i: usize) -> &[u64] {
        &self.leaves[i]
    }

    pub fn is_sealed(&self, i: usize) -> bool {
        self.sealed[i]
    }

    pub fn node(&self, level: usize, index: usize) -> &[WeightedPoint] {
        &self.nodes[level][index]
    }

    pub fn root(&self) -> &[WeightedPoint] {
        &self.nodes[self.nodes.len() - 1][0]
    }

    /// Ids stored under a node.
    pub fn subtree_ids(&self, level: usize, index: usize) -> Vec<u64> {
        let span = 1usize << level;
        let lo = index * span;
        let hi = (lo + span).min(self.leaves.len());
        self.leaves[lo..hi].iter().flatten().copied().collect()
    }

    fn mark(&mut self, leaf: usize) {
        self.dirty[0].insert(leaf);
    }

    fn place(&mut self, leaf: usize, id: u64) {
        let index = self.leaves[leaf].len();
        self.leaves[leaf].push(id);
        self.slots.insert(id, Slot { leaf, index });
        self.mark(leaf);
    }

    fn take(&mut self, leaf: usize, index: usize) -> u64 {
        let id = self.leaves[leaf].swap_remove(index);
        if let Some(&moved) = self.leaves[leaf].get(index) {
            self.slots.insert(moved, Slot { leaf, index });
        }
        self.slots.remove(&id);
        self.mark(leaf);
        id
    }

    /// Adds a point to the hot bucket, sealing it first when full.
    pub fn insert(&mut self, id: u64) {
        if self.leaves[self.hot].len() >= self.bucket {
            self.sealed[self.hot] = true;
            self.sealed_stack.push(self.hot);
            self.hot = self.free_leaf();
        }
        self.place(self.hot, id);
    }

    fn free_leaf(&mut self) -> usize {
        if let Some(i) = (0..self.leaves.len()).find(|&i| !self.sealed[i] && i != self.hot && self.leaves[i].is_empty()) {
            return i;
        }
        let old = self.leaves.len();
        self.grow();
        old
    }

    /// Doubles the leaf slots; the old root becomes the left child of a new root.
    fn grow(&mut self) {
        let old = self.leaves.len();
        self.leaves.resize(2 * old, Vec::new());
        self.sealed.resize(2 * old, false);
        for (level, nodes) in self.nodes.iter_mut().enumerate() {
            let width = (2 * old) >> level;
            nodes.resize(width, Vec::new());
        }
        let top = self.nodes.len() - 1;
        let root = self.nodes[top][0].clone();
        self.nodes.push(vec![root]);
        self.dirty.push(BTreeSet::new());
        let new_top = self.nodes.len() - 1;
        self.dirty[new_top].insert(0);
    }

    /// Removes a point; a sealed leaf is refilled from the hot bucket (unsealing the most recently
    /// sealed leaf when the hot bucket is empty).
    pub fn remove(&mut self, id: u64) -> bool {
        let Some(Slot { leaf, index }) = self.slots.get(&id).copied() else {
            return false;
        };
        self.take(leaf, index);
        if leaf == self.hot {
            return true;
        }
        if self.leaves[self.hot].is_empty() {
            let top = self.sealed_stack.pop().expect("a sealed leaf exists");
            self.sealed[top] = false;
            self.hot = top;
            if top == leaf {
                return true;
            }
        }
        let last = self.leaves[self.hot].len() - 1;
        let donor = self.take(self.hot, last);
        self.place(leaf, donor);
        true
    }

    /// Recomputes dirty leaves and their ancestors.
    pub fn flush(
        &mut self,
        model: &LossModel,
        ball: &ParamBall,
        blackbox: &BlackBox,
        points: &HashMap<u64, WeightedPoint>,
    ) -> Result<FlushStats> {
        let mut stats = FlushStats::default();
        let leaves: Vec<usize> = std::mem::take(&mut self.dirty[0]).into_iter().collect();
        for &i in &leaves {
            let mut raw: Vec<WeightedPoint> = self.leaves[i].iter().map(|id| points[id].clone()).collect();
            raw.sort_by_key(|p| p.id);
            stats.raw_points += raw.len();
            stats.nodes += 1;
            self.nodes[0][i] = self.reduce(model, ball, blackbox, raw, 0, i)?;
            if self.nodes.len() > 1 {
                self.dirty[1].insert(i / 2);
            }
        }
        for level in 1..self.nodes.len() {
            let todo: Vec<usize> = std::mem::take(&mut self.dirty[level]).into_iter().collect();
            for i in todo {
                let mut merged = self.nodes[level - 1][2 * i].clone();
                merged.extend(self.nodes[level - 1][2 * i + 1].iter().cloned());
                stats.nodes += 1;
                self.nodes[level][i] = self.reduce(model, ball, blackbox, merged, level, i)?;
                if level + 1 < self.nodes.len() {
                    self.dirty[level + 1].insert(i / 2);
                }
            }
        }
        Ok(stats)
    }

    fn reduce(
        &self,
        model: &LossModel,
        ball: &ParamBall,
        blackbox: &BlackBox,
        merged: Vec<WeightedPoint>,
        level: usize,
        index: usize,
    ) -> Result<Vec<WeightedPoint>> {
        if merged.is_empty() {
            return Ok(merged);
        }
        Ok(blackbox
            .build(model, &merged, ball, self.eps_level, node_seed(self.seed, level, index))?
            .points)
    }

    /// Leaf-state and bookkeeping check.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.dirty.iter().any(|d| !d.is_empty()) {
            return Err("unflushed nodes".into());
        }
        let mut stacked: Vec<usize> = self.sealed_stack.clone();
        stacked.sort_unstable();
        let sealed: Vec<usize> = (0..self.leaves.len()).filter(|&i| self.sealed[i]).collect();
        if stacked != sealed {
            return Err("sealed stack out of sync".into());
        }
        if self.sealed[self.hot] {
            return Err("hot bucket is sealed".into());
        }
        let mut count = 0;
        for (i, leaf) in self.leaves.iter().enumerate() {
            count += leaf.len();
            if self.sealed[i] && leaf.len() != self.bucket {
                return Err(format!("sealed leaf {i} holds {} points", leaf.len()));
            }
            if !self.sealed[i] && i != self.hot && !leaf.is_empty() {
                return Err(format!("free leaf {i} is not empty"));
            }
            if leaf.len() > self.bucket {
                return Err(format!("leaf {i} overflows"));
            }
            for (j, id) in leaf.iter().enumerate() {
                if self.slots.get(id) != Some(&Slot { leaf: i, index: j }) {
                    return Err(format!("slot map stale for id {id}"));
                }
            }
        }
        if count != self.slots.len() {
            return Err("slot map size mismatch".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_heights() {
        assert_eq!(budget_height(1024, 64), 5);
        assert_eq!(budget_height(64, 64), 1);
        assert_eq!(budget_height(1000, 64), 5);
        assert_eq!(budget_height(10, 64), 1);
    }

    #[test]
    fn seal_refill_and_unseal() {
        let mut t = MnrTree::new(2, 2, 0.1, 0);
        for id in 0..5 {
            t.insert(id);
        }
        // leaves: [0,1] sealed, [2,3] sealed after growth, [4] hot
        assert_eq!(t.leaf_count(), 4);
        assert_eq!(t.height(), 3);
        t.dirty.iter_mut().for_each(|d| d.clear());
        t.check().unwrap();
        // removing from a sealed leaf takes the hot bucket's only point
        t.remove(0);
        assert!(t.leaf(t.hot_leaf()).is_empty());
        t.dirty.iter_mut().for_each(|d| d.clear());
        t.check().unwrap();
        // hot bucket empty: the most recently sealed leaf is unsealed as donor
        t.remove(1);
        t.dirty.iter_mut().for_each(|d| d.clear());
        t.check().unwrap();
        assert_eq!(t.len(), 3);
    }
}
