use std::collections::BTreeSet;

use rand::Rng;

use super::CheckOutcome;
use crate::sim::Memory;
use crate::Va;

pub const MIN_REDZONE: u64 = 1;
pub const MAX_REDZONE: u64 = 7;

/// A struct laid out with a random run of security bytes before each field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaliformsLayout {
    pub base: Va,
    /// `(address, len)` of each field.
    pub fields: Vec<(Va, u64)>,
    /// `(address, len)` of each redzone; `redzones[i]` precedes `fields[i]`.
    pub redzones: Vec<(Va, u64)>,
}

impl CaliformsLayout {
    pub fn randomize<R: Rng>(rng: &mut R, base: Va, field_lens: &[u64]) -> Self {
        let sizes: Vec<u64> = field_lens
            .iter()
            .map(|_| rng.gen_range(MIN_REDZONE..=MAX_REDZONE))
            .collect();
        Self::with_redzones(base, field_lens, &sizes)
    }

    pub fn with_redzones(base: Va, field_lens: &[u64], redzone_sizes: &[u64]) -> Self {
        assert_eq!(field_lens.len(), redzone_sizes.len());
        let mut cursor = base;
        let mut fields = Vec::new();
        let mut redzones = Vec::new();
        for (&len, &rz) in field_lens.iter().zip(redzone_sizes) {
            redzones.push((cursor, rz));
            cursor += rz;
            fields.push((cursor, len));
            cursor += len;
        }
        Self {
            base,
            fields,
            redzones,
        }
    }

    pub fn size(&self) -> u64 {
        self.fields.last().map_or(0, |(a, l)| a + l - self.base)
    }
}

/// Result of a byte access under Califorms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldAccess {
    Data(u8),
    /// Speculative access to a security byte: the load returns zero.
    Zero,
    /// Architectural access to a security byte.
    Fault,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaliformsUnit {
    redzone_bytes: BTreeSet<Va>,
}

impl CaliformsUnit {
    pub fn add_layout(&mut self, layout: &CaliformsLayout) {
        for &(a, l) in &layout.redzones {
            self.redzone_bytes.extend(a..a + l);
        }
    }

    pub fn is_redzone(&self, addr: Va) -> bool {
        self.redzone_bytes.contains(&addr)
    }

    pub fn check(&self, addr: Va, width: u64) -> CheckOutcome {
        CheckOutcome::from_bool(
            self.redzone_bytes
                .range(addr..addr.saturating_add(width))
                .next()
                .is_none(),
        )
    }

    pub fn califorms_access(&self, mem: &Memory, addr: Va, speculative: bool) -> FieldAccess {
        match (self.is_redzone(addr), speculative) {
            (false, _) => FieldAccess::Data(mem.read_byte(addr)),
            (true, true) => FieldAccess::Zero,
            (true, false) => FieldAccess::Fault,
        }
    }
}
