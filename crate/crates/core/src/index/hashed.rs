use std::collections::HashMap;
use std::io::Cursor;

use super::Posting;

/// Default number of hash buckets in the n-gram tier (2^23).
pub const DEFAULT_SLOT_COUNT: u32 = 1 << 23;

/// Bucket for a canonical n-gram: 32-bit MurmurHash3 (x86, seed 0) of the
/// UTF-8 bytes, reduced modulo `slot_count`.
pub fn slot_of(canonical: &str, slot_count: u32) -> u32 {
    let hash = murmur3::murmur3_32(&mut Cursor::new(canonical.as_bytes()), 0)
        .expect("reading from an in-memory buffer cannot fail");
    hash % slot_count
}

/// Posting lists keyed by hash bucket. Every n-gram that lands in a bucket
/// shares its list, so per-bucket document counts can only over-estimate the
/// document frequency of any single n-gram.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedTier {
    slot_count: u32,
    slots: HashMap<u32, Vec<Posting>>,
}

impl HashedTier {
    pub fn new(slot_count: u32) -> Self {
        assert!(slot_count > 0, "slot_count must be positive");
        Self {
            slot_count,
            slots: HashMap::new(),
        }
    }

    pub fn slot_count(&self) -> u32 {
        self.slot_count
    }

    pub fn slot_for(&self, canonical: &str) -> u32 {
        slot_of(canonical, self.slot_count)
    }

    /// Number of buckets holding at least one posting.
    pub fn occupied(&self) -> usize {
        self.slots.len()
    }

    pub fn postings(&self, slot: u32) -> &[Posting] {
        self.slots.get(&slot).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn slots(&self) -> &HashMap<u32, Vec<Posting>> {
        &self.slots
    }

    pub(crate) fn slot_entry(&mut self, slot: u32) -> &mut Vec<Posting> {
        debug_assert!(slot < self.slot_count);
        self.slots.entry(slot).or_default()
    }

    pub(crate) fn insert_list(&mut self, slot: u32, postings: Vec<Posting>) {
        self.slots.insert(slot, postings);
    }
}
