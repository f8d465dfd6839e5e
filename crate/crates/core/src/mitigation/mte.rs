use std::collections::BTreeMap;

use rand::Rng;

use super::{CheckOutcome, CheckPlacement};
use crate::Va;

pub const GRANULE_BYTES: u64 = 16;

/// Per-granule allocation tags, kept outside the simulated address space.
/// Granules never tagged carry tag 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStore {
    tags: BTreeMap<u64, u16>,
}

impl TagStore {
    pub fn set_range(&mut self, base: Va, len: u64, tag: u16) {
        let first = base / GRANULE_BYTES;
        let last = (base + len.max(1) - 1) / GRANULE_BYTES;
        for g in first..=last {
            self.tags.insert(g, tag);
        }
    }

    pub fn tag_of(&self, addr: Va) -> u16 {
        self.tags.get(&(addr / GRANULE_BYTES)).copied().unwrap_or(0)
    }
}

/// Lock-and-key tag check: the pointer's tag must equal the tag of every
/// granule touched. Used for MTE/ADI-style tagging and for the temporal
/// half of No-FAT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagCheckUnit {
    pub store: TagStore,
    pub tag_shift: u32,
    pub tag_bits: u32,
    pub placement: CheckPlacement,
}

impl TagCheckUnit {
    /// 4-bit tags in bits 56..60.
    pub fn mte(placement: CheckPlacement) -> Self {
        Self {
            store: TagStore::default(),
            tag_shift: 56,
            tag_bits: 4,
            placement,
        }
    }

    /// `tag_bits`-wide allocation identifiers in bits 48.., checked before
    /// the access issues.
    pub fn no_fat_temporal(tag_bits: u32) -> Self {
        assert!((1..=16).contains(&tag_bits));
        Self {
            store: TagStore::default(),
            tag_shift: 48,
            tag_bits,
            placement: CheckPlacement::SequentialGuard,
        }
    }

    fn field_mask(&self) -> u64 {
        ((1u64 << self.tag_bits) - 1) << self.tag_shift
    }

    pub fn pointer_tag(&self, ptr: u64) -> u16 {
        ((ptr & self.field_mask()) >> self.tag_shift) as u16
    }

    pub fn tag_pointer(&self, va: Va, tag: u16) -> u64 {
        (va & !self.field_mask()) | ((tag as u64) << self.tag_shift & self.field_mask())
    }

    pub fn strip(&self, ptr: u64) -> Va {
        ptr & !self.field_mask()
    }

    /// Draw a fresh non-zero tag for `[base, base + len)` and return the
    /// tagged pointer.
    pub fn alloc<R: Rng>(&mut self, rng: &mut R, base: Va, len: u64) -> u64 {
        let tag = rng.gen_range(1..(1u32 << self.tag_bits)) as u16;
        self.store.set_range(base, len, tag);
        self.tag_pointer(base, tag)
    }

    pub fn mte_check(&self, ptr: u64, width: u64) -> CheckOutcome {
        let tag = self.pointer_tag(ptr);
        let addr = self.strip(ptr);
        let first = addr / GRANULE_BYTES;
        let last = (addr + width.max(1) - 1) / GRANULE_BYTES;
        CheckOutcome::from_bool((first..=last).all(|g| self.store.tag_of(g * GRANULE_BYTES) == tag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn allocation_tag_matches_and_neighbor_differs() {
        let mut unit = TagCheckUnit::mte(CheckPlacement::SequentialGuard);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = unit.alloc(&mut rng, 0x1000_0000, 32);
        unit.store
            .set_range(0x1000_0020, 16, (unit.pointer_tag(p) + 1) % 16);
        assert!(unit.mte_check(p, 8).passed());
        assert!(!unit.mte_check(p + 32, 8).passed());
        // An access straddling into the differently-tagged granule fails too.
        assert!(!unit.mte_check(p + 28, 8).passed());
    }

    #[test]
    fn four_bit_tag_found_within_sixteen_guesses() {
        let mut unit = TagCheckUnit::mte(CheckPlacement::SequentialGuard);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let p = unit.alloc(&mut rng, 0x1000_0000, 16);
        let va = unit.strip(p);
        let found = (0..16u16).position(|t| unit.mte_check(unit.tag_pointer(va, t), 8).passed());
        assert!(found.is_some_and(|i| i < 16));
    }
}
