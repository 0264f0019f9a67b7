//! Bounded store of block pre-images, evicting the oldest epoch first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShadowEntry {
    pub payload: Vec<u8>,
    /// When the retained content was originally written.
    pub written_at: SimTime,
    /// When it was copied into the store.
    pub retained_at: SimTime,
}

#[derive(Clone, Debug, Default)]
pub struct ShadowStore {
    budget: u64,
    used: u64,
    /// Keyed by (lba, epoch); the epoch is the one under which the payload
    /// was written.
    entries: BTreeMap<(u64, u64), ShadowEntry>,
    by_epoch: BTreeMap<u64, u64>,
    evictions: u64,
}

impl ShadowStore {
    pub fn new(budget: u64) -> Self {
        ShadowStore {
            budget,
            ..Default::default()
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    /// Inserts a pre-image, evicting the oldest epochs until it fits. An
    /// existing `(lba, epoch)` entry is left untouched.
    pub fn insert(&mut self, lba: u64, epoch: u64, entry: ShadowEntry) -> Result<()> {
        let size = entry.payload.len() as u64;
        if size > self.budget {
            return Err(Error::ShadowBudgetExceeded(entry.payload.len()));
        }
        if self.entries.contains_key(&(lba, epoch)) {
            return Ok(());
        }
        while self.used + size > self.budget {
            let (old_epoch, old_lba) = self.by_epoch.pop_first().expect("used > 0 implies entries");
            let e = self
                .entries
                .remove(&(old_lba, old_epoch))
                .expect("index in sync");
            self.used -= e.payload.len() as u64;
            self.evictions += 1;
        }
        self.used += size;
        self.by_epoch.insert(epoch, lba);
        self.entries.insert((lba, epoch), entry);
        Ok(())
    }

    pub fn get(&self, lba: u64, epoch: u64) -> Option<&ShadowEntry> {
        self.entries.get(&(lba, epoch))
    }

    /// Entries of `lba`, oldest epoch first.
    pub fn versions(&self, lba: u64) -> impl DoubleEndedIterator<Item = (u64, &ShadowEntry)> {
        self.entries
            .range((lba, 0)..=(lba, u64::MAX))
            .map(|(&(_, e), v)| (e, v))
    }

    /// Newest entry of `lba` written at or before `t`.
    pub fn newest_at_or_before(&self, lba: u64, t: SimTime) -> Option<&ShadowEntry> {
        self.versions(lba)
            .rev()
            .map(|(_, e)| e)
            .find(|e| e.written_at <= t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64, &ShadowEntry)> {
        self.entries.iter().map(|(&(l, e), v)| (l, e, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(fill: u8, at: u64) -> ShadowEntry {
        ShadowEntry {
            payload: vec![fill; 16],
            written_at: SimTime::from_nanos(at),
            retained_at: SimTime::from_nanos(at + 1),
        }
    }

    #[test]
    fn one_block_budget_evicts_oldest() {
        let mut s = ShadowStore::new(16);
        s.insert(1, 5, entry(1, 0)).unwrap();
        s.insert(2, 6, entry(2, 0)).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.get(1, 5).is_none());
        assert_eq!(s.get(2, 6).unwrap().payload, vec![2; 16]);
        assert_eq!(s.evictions(), 1);
    }

    #[test]
    fn oversized_entry_is_an_error() {
        let mut s = ShadowStore::new(8);
        assert!(matches!(
            s.insert(0, 1, entry(0, 0)),
            Err(Error::ShadowBudgetExceeded(16))
        ));
    }

    #[test]
    fn entries_are_immutable() {
        let mut s = ShadowStore::new(64);
        s.insert(3, 1, entry(1, 0)).unwrap();
        s.insert(3, 1, entry(9, 0)).unwrap();
        assert_eq!(s.get(3, 1).unwrap().payload, vec![1; 16]);
        assert_eq!(s.used(), 16);
    }

    #[test]
    fn newest_version_at_or_before() {
        let mut s = ShadowStore::new(1 << 10);
        s.insert(4, 1, entry(1, 10)).unwrap();
        s.insert(4, 3, entry(2, 20)).unwrap();
        s.insert(5, 2, entry(3, 15)).unwrap();
        assert_eq!(
            s.newest_at_or_before(4, SimTime::from_nanos(25))
                .unwrap()
                .payload[0],
            2
        );
        assert_eq!(
            s.newest_at_or_before(4, SimTime::from_nanos(19))
                .unwrap()
                .payload[0],
            1
        );
        assert!(s.newest_at_or_before(4, SimTime::from_nanos(9)).is_none());
    }
}
