//! Domain types shared by every other module.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const DEFAULT_R_MAX: u8 = 5;

/// One (user, item, rating, timestamp) event over dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
    pub timestamp: i64,
}

/// Bidirectional raw id <-> dense index table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense index of `raw`, assigning the next free index on first sight.
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len();
        self.raw.push(raw.to_owned());
        self.index.insert(raw.to_owned(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, index: usize) -> Option<&str> {
        self.raw.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.raw.iter().enumerate().map(|(i, s)| (i, s.as_str()))
    }

    /// Builds a map from `(raw, dense)` pairs; indices must cover `0..n` exactly once.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut slots: Vec<Option<String>> = Vec::new();
        for (raw, i) in pairs {
            if i >= slots.len() {
                slots.resize(i + 1, None);
            }
            if slots[i].is_some() {
                return Err(Error::Config(format!("dense index {i} mapped twice")));
            }
            slots[i] = Some(raw.into());
        }
        let mut map = IdMap::new();
        for (i, slot) in slots.into_iter().enumerate() {
            let raw = slot.ok_or_else(|| Error::Config(format!("dense index {i} missing from id map")))?;
            if map.index.contains_key(&raw) {
                return Err(Error::Config(format!("raw id {raw:?} mapped twice")));
            }
            map.intern(&raw);
        }
        Ok(map)
    }
}

/// Which partition of a split dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Per-user chronological train/validation/test split over dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<InteractionRecord>,
    pub validation: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub user_count: usize,
    pub item_count: usize,
    pub r_max: u8,
    pub users: IdMap,
    pub items: IdMap,
}

impl SplitDataset {
    pub fn partition(&self, which: Partition) -> &[InteractionRecord] {
        match which {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn interaction_count(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    /// Items of each user in one partition, in record order.
    pub fn items_by_user(&self, which: Partition) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count];
        for r in self.partition(which) {
            out[r.user].push(r.item);
        }
        out
    }

    /// Sorted, deduplicated items each user touched in any partition.
    pub fn all_items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count];
        for r in self.train.iter().chain(&self.validation).chain(&self.test) {
            out[r.user].push(r.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }

    /// Checks dense indices, rating range, and per-user chronology across
    /// partitions. Users with held-out records but no training records are
    /// allowed (a one-record user splits 0/0/1).
    pub fn validate(&self) -> Result<()> {
        let mut last_train = vec![i64::MIN; self.user_count];
        let mut first_val = vec![i64::MAX; self.user_count];
        let mut last_val = vec![i64::MIN; self.user_count];
        let mut first_test = vec![i64::MAX; self.user_count];
        for (which, recs) in [
            (Partition::Train, &self.train),
            (Partition::Validation, &self.validation),
            (Partition::Test, &self.test),
        ] {
            for r in recs {
                if r.user >= self.user_count || r.item >= self.item_count {
                    return Err(Error::Config(format!(
                        "record ({}, {}) outside {}x{} index space",
                        r.user, r.item, self.user_count, self.item_count
                    )));
                }
                if r.rating == 0 || r.rating > self.r_max {
                    return Err(Error::Config(format!("rating {} outside [1, {}]", r.rating, self.r_max)));
                }
                let u = r.user;
                match which {
                    Partition::Train => last_train[u] = last_train[u].max(r.timestamp),
                    Partition::Validation => {
                        first_val[u] = first_val[u].min(r.timestamp);
                        last_val[u] = last_val[u].max(r.timestamp);
                    }
                    Partition::Test => first_test[u] = first_test[u].min(r.timestamp),
                }
            }
        }
        for u in 0..self.user_count {
            if last_train[u] > first_val[u] || last_train[u] > first_test[u] || last_val[u] > first_test[u] {
                return Err(Error::Config(format!("user {u} partitions are not chronological")));
            }
        }
        Ok(())
    }
}

/// Counts of each rating level `1..=r_max` for one item (or the whole catalog).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl RatingHistogram {
    pub fn empty(r_max: u8) -> Self {
        Self { counts: vec![0; r_max as usize], total: 0 }
    }

    /// `counts[r - 1]` is the number of ratings equal to `r`.
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn add(&mut self, rating: u8) {
        self.counts[rating as usize - 1] += 1;
        self.total += 1;
    }

    pub fn r_max(&self) -> u8 {
        self.counts.len() as u8
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Empirical probability of `rating`.
    ///
    /// Panics if `rating` is outside `1..=r_max`.
    pub fn probability(&self, rating: u8) -> Result<f64> {
        assert!(
            rating >= 1 && rating <= self.r_max(),
            "rating {rating} outside [1, {}]",
            self.r_max()
        );
        if self.total == 0 {
            return Err(Error::EmptyHistogram);
        }
        Ok(self.counts[rating as usize - 1] as f64 / self.total as f64)
    }

    /// `(rating, probability)` for every level with nonzero count.
    pub fn support(&self) -> impl Iterator<Item = (u8, f64)> + '_ {
        let total = self.total as f64;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (i as u8 + 1, c as f64 / total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn probability_examples() {
        let h = RatingHistogram::from_counts(vec![1, 0, 0, 1, 2]);
        assert_eq!(h.probability(5).unwrap(), 0.5);
        assert_eq!(h.probability(3).unwrap(), 0.0);
        let h = RatingHistogram::from_counts(vec![0, 0, 0, 0, 10]);
        assert_eq!(h.probability(5).unwrap(), 1.0);
    }

    #[test]
    fn empty_histogram_errors() {
        let h = RatingHistogram::empty(5);
        assert!(matches!(h.probability(1), Err(Error::EmptyHistogram)));
        assert_eq!(h.support().count(), 0);
    }

    #[test]
    fn id_map_rejects_gaps() {
        assert!(IdMap::from_pairs([("a", 0usize), ("b", 2)]).is_err());
        assert!(IdMap::from_pairs([("a", 0usize), ("a", 1)]).is_err());
        let m = IdMap::from_pairs([("b", 1usize), ("a", 0)]).unwrap();
        assert_eq!(m.raw(0), Some("a"));
        assert_eq!(m.get("b"), Some(1));
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(counts in proptest::collection::vec(0u64..1000, 1..10)) {
            let h = RatingHistogram::from_counts(counts);
            prop_assume!(h.total() > 0);
            let sum: f64 = (1..=h.r_max()).map(|r| h.probability(r).unwrap()).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn id_map_round_trip(ids in proptest::collection::vec("[a-z0-9]{1,6}", 0..50)) {
            let mut m = IdMap::new();
            for id in &ids {
                let i = m.intern(id);
                prop_assert_eq!(m.raw(i), Some(id.as_str()));
            }
            for id in &ids {
                prop_assert_eq!(m.raw(m.get(id).unwrap()), Some(id.as_str()));
            }
        }
    }
}
