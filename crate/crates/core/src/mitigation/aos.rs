use std::collections::BTreeMap;

use super::{CheckOutcome, TaggedPointer};
use crate::crypto::PacHasher;
use crate::Va;

/// Hashed bounds table: PAC to the bounds of every allocation signed with
/// it. A PAC shared by several allocations keeps all of their bounds and an
/// access passes if any of them covers it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Hbt {
    entries: BTreeMap<u16, Vec<(Va, u64)>>,
}

impl Hbt {
    pub fn insert(&mut self, pac: u16, base: Va, size: u64) {
        self.entries.entry(pac).or_default().push((base, size));
    }

    pub fn remove(&mut self, pac: u16, base: Va) {
        if let Some(list) = self.entries.get_mut(&pac) {
            list.retain(|&(b, _)| b != base);
            if list.is_empty() {
                self.entries.remove(&pac);
            }
        }
    }

    pub fn lookup(&self, pac: u16) -> &[(Va, u64)] {
        self.entries.get(&pac).map_or(&[], Vec::as_slice)
    }

    pub fn covers(&self, pac: u16, addr: Va, width: u64) -> bool {
        self.lookup(pac)
            .iter()
            .any(|&(b, s)| addr >= b && addr.saturating_add(width) <= b + s)
    }

    /// PACs that index more than one allocation.
    pub fn collisions(&self) -> Vec<u16> {
        self.entries
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(&p, _)| p)
            .collect()
    }
}

/// Pointer signing plus the bounds check applied to every access through a
/// signed pointer. Unsigned pointers (meta 0) are not checked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AosUnit {
    pub hasher: PacHasher,
    pub hbt: Hbt,
}

impl AosUnit {
    pub fn new(key: u64, pac_bits: u32) -> Self {
        Self {
            hasher: PacHasher::new(key, pac_bits),
            hbt: Hbt::default(),
        }
    }

    /// Meta value 0 means "unsigned", so a zero hash is bumped to 1.
    pub fn pac_for(&self, base: Va, size: u64) -> u16 {
        match self.hasher.compute_pac(base, size) as u16 {
            0 => 1,
            pac => pac,
        }
    }

    pub fn aos_alloc(&mut self, base: Va, size: u64) -> TaggedPointer {
        let pac = self.pac_for(base, size);
        self.hbt.insert(pac, base, size);
        TaggedPointer::new(base, pac)
    }

    pub fn aos_bound_check(&self, ptr: TaggedPointer, width: u64) -> CheckOutcome {
        match ptr.meta() {
            0 => CheckOutcome::Pass,
            pac => CheckOutcome::from_bool(self.hbt.covers(pac, ptr.va(), width)),
        }
    }
}
