//! The sorted table of pilot costs with the critical pointer separating the top `z̃` entries.

use std::cmp::{Ordering, Reverse};
use std::collections::BTreeSet;

/// `f64` ordered by `total_cmp`.
#[derive(Debug, Clone, Copy)]
pub struct OrdF64(pub f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Ascending table order: by value, and among equal values the smaller id ranks higher (matching
/// the trimming order).
pub type Key = (OrdF64, Reverse<u64>);

pub fn key(value: f64, id: u64) -> Key {
    (OrdF64(value), Reverse(id))
}

/// Where a point landed after an insertion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Inlier,
    /// The point is a suspected outlier; `demoted` left the outlier side to make room.
    Outlier { demoted: Option<u64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Removal {
    pub was_outlier: bool,
    /// Largest inlier moved to the outlier side to refill it.
    pub promoted: Option<u64>,
}

/// Two ordered halves of one sorted list: `upper` holds the `min(z̃, n)` largest entries and its
/// minimum is the critical pointer.
#[derive(Debug, Clone, Default)]
pub struct AuxTable {
    lower: BTreeSet<Key>,
    upper: BTreeSet<Key>,
    z_tilde: usize,
}

impl AuxTable {
    pub fn new(z_tilde: usize) -> Self {
        AuxTable {
            z_tilde,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len() + self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn z_tilde(&self) -> usize {
        self.z_tilde
    }

    pub fn outlier_count(&self) -> usize {
        self.upper.len()
    }

    /// Value at the critical pointer: the `z̃`-th largest.
    pub fn critical(&self) -> Option<(f64, u64)> {
        self.upper.first().map(|(v, Reverse(id))| (v.0, *id))
    }

    pub fn insert(&mut self, id: u64, value: f64) -> Placement {
        let k = key(value, id);
        if self.upper.len() < self.z_tilde {
            debug_assert!(self.lower.is_empty());
            self.upper.insert(k);
            return Placement::Outlier { demoted: None };
        }
        match self.upper.first() {
            Some(p) if k > *p => {
                self.upper.insert(k);
                let dk = self.upper.pop_first().expect("nonempty");
                let demoted = dk.1 .0;
                self.lower.insert(dk);
                Placement::Outlier { demoted: Some(demoted) }
            }
            _ => {
                self.lower.insert(k);
                Placement::Inlier
            }
        }
    }

    pub fn remove(&mut self, id: u64, value: f64) -> Option<Removal> {
        let k = key(value, id);
        if self.upper.remove(&k) {
            let promoted = self.lower.pop_last().map(|pk| {
                let pid = pk.1 .0;
                self.upper.insert(pk);
                pid
            });
            Some(Removal { was_outlier: true, promoted })
        } else if self.lower.remove(&k) {
            Some(Removal { was_outlier: false, promoted: None })
        } else {
            None
        }
    }

    /// Moves entries across the pointer for a new `z̃`. Returns `(promoted, demoted)` ids.
    pub fn set_z_tilde(&mut self, z_tilde: usize) -> (Vec<u64>, Vec<u64>) {
        self.z_tilde = z_tilde;
        let mut promoted = Vec::new();
        let mut demoted = Vec::new();
        while self.upper.len() > z_tilde {
            let k = self.upper.pop_first().expect("nonempty");
            demoted.push(k.1 .0);
            self.lower.insert(k);
        }
        while self.upper.len() < z_tilde {
            match self.lower.pop_last() {
                Some(k) => {
                    promoted.push(k.1 .0);
                    self.upper.insert(k);
                }
                None => break,
            }
        }
        (promoted, demoted)
    }

    pub fn is_outlier(&self, id: u64, value: f64) -> bool {
        self.upper.contains(&key(value, id))
    }

    /// Outlier ids, descending.
    pub fn outlier_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.upper.iter().rev().map(|k| k.1 .0)
    }

    pub fn inlier_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.lower.iter().map(|k| k.1 .0)
    }

    /// All `(value, id)` pairs, ascending.
    pub fn entries(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.lower.iter().chain(self.upper.iter()).map(|k| (k.0 .0, k.1 .0))
    }

    /// Structural check: sizes and the split between the halves.
    pub fn check(&self) -> Result<(), String> {
        let want = self.z_tilde.min(self.len());
        if self.upper.len() != want {
            return Err(format!("outlier side has {} entries, expected {want}", self.upper.len()));
        }
        if let (Some(lo), Some(hi)) = (self.lower.last(), self.upper.first()) {
            if lo >= hi {
                return Err("an inlier ranks at or above the critical pointer".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: &[f64], z_tilde: usize) -> AuxTable {
        let mut t = AuxTable::new(z_tilde);
        for (i, &v) in values.iter().enumerate() {
            t.insert(i as u64, v);
        }
        t
    }

    #[test]
    fn keeps_top_entries() {
        let t = table(&[1.0, 5.0, 3.0, 4.0, 2.0], 2);
        t.check().unwrap();
        assert_eq!(t.outlier_ids().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(t.critical(), Some((4.0, 3)));
    }

    #[test]
    fn ties_prefer_smaller_id() {
        let t = table(&[3.0, 3.0, 1.0], 1);
        assert_eq!(t.outlier_ids().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn removal_promotes() {
        let mut t = table(&[1.0, 5.0, 3.0, 4.0, 2.0], 2);
        let r = t.remove(1, 5.0).unwrap();
        assert_eq!(r, Removal { was_outlier: true, promoted: Some(2) });
        t.check().unwrap();
        assert!(t.remove(9, 1.0).is_none());
    }

    #[test]
    fn z_tilde_round_trip() {
        let mut t = table(&[1.0, 5.0, 3.0, 4.0, 2.0, 0.5], 2);
        let before: Vec<u64> = t.outlier_ids().collect();
        let (p, d) = t.set_z_tilde(4);
        assert_eq!((p.len(), d.len()), (2, 0));
        let (p, d) = t.set_z_tilde(2);
        assert_eq!((p.len(), d.len()), (0, 2));
        assert_eq!(t.outlier_ids().collect::<Vec<_>>(), before);
        t.set_z_tilde(10);
        assert_eq!(t.outlier_count(), 6);
        t.check().unwrap();
    }
}
