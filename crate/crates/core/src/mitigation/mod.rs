//! Memory-corruption mitigations: descriptors for the registry, the
//! executable check models, and the protection unit the simulator consults
//! on every memory access.

mod aos;
mod aslr;
mod c3;
mod califorms;
mod canary;
mod mte;
mod pa;
mod protection;
mod registry;

use serde::{Deserialize, Serialize};

pub use aos::{AosUnit, Hbt};
pub use aslr::{aslr_check, Aslr, Morpheus};
pub use c3::{c3_data_xor, C3Codec, C3Decode, C3Unit};
pub use califorms::{CaliformsLayout, CaliformsUnit, FieldAccess};
pub use canary::{Canary, StackFrame};
pub use mte::{TagCheckUnit, TagStore, GRANULE_BYTES};
pub use pa::{pa_auth, pa_sign};
pub use protection::{GuardVerdict, Protection};
pub use registry::{registry, MitigationId};

use crate::{Va, VA_MASK};

/// How a security check relates to the operation it protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckPlacement {
    /// The protected op issues only after the check passes.
    SequentialGuard,
    /// The protected op always issues; a failing check forces its result to 0.
    ValueSubstitute,
    /// The protected op always issues; a failing check is recorded as an
    /// exception raised at commit.
    Parallel,
}

impl CheckPlacement {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckPlacement::SequentialGuard => "sequential_guard",
            CheckPlacement::ValueSubstitute => "value_substitute",
            CheckPlacement::Parallel => "parallel",
        }
    }
}

impl std::str::FromStr for CheckPlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential_guard" | "sequential" => Ok(Self::SequentialGuard),
            "value_substitute" => Ok(Self::ValueSubstitute),
            "parallel" => Ok(Self::Parallel),
            other => Err(format!("unknown check placement {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofableKind {
    TamperableMetadata,
    AddressLayoutRandomization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class", content = "kind")]
pub enum Classification {
    Spoofable(SpoofableKind),
    /// Tamperproof metadata: the attacker cannot forge the non-pointer input.
    Unspoofable,
}

impl Classification {
    pub fn is_spoofable(self) -> bool {
        matches!(self, Classification::Spoofable(_))
    }

    pub fn label(self) -> &'static str {
        match self {
            Classification::Spoofable(SpoofableKind::TamperableMetadata) => "Tamperable Metadata",
            Classification::Spoofable(SpoofableKind::AddressLayoutRandomization) => {
                "Address Layout Randomization"
            }
            Classification::Unspoofable => "Tamperproof Metadata",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretSpec {
    pub kind: String,
    pub entropy_bits: u32,
    pub resides_in_vm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationDescriptor {
    pub id: MitigationId,
    pub name: String,
    pub classification: Classification,
    /// Absent for registry-only entries and for schemes whose placement is
    /// undocumented (MTE, ADI) until configured.
    pub placement: Option<CheckPlacement>,
    /// Absent for unspoofable entries: their metadata is public.
    pub secret: Option<SecretSpec>,
    pub rerandomize_interval_ms: Option<f64>,
    /// Whether the simulator has an executable model.
    pub executable: bool,
    /// For registry-only entries: whether program data is reachable by a
    /// transient load. Executable entries derive this from their graph.
    pub program_data_exposed: Option<bool>,
}

impl MitigationDescriptor {
    pub fn with_placement(mut self, placement: CheckPlacement) -> Self {
        self.placement = Some(placement);
        self
    }

    pub fn entropy_bits(&self) -> Option<u32> {
        self.secret.as_ref().map(|s| s.entropy_bits)
    }
}

/// 64-bit pointer: 48-bit VA plus a 16-bit metadata field in the upper bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedPointer(pub u64);

impl TaggedPointer {
    pub fn new(va: Va, meta: u16) -> Self {
        Self((va & VA_MASK) | (meta as u64) << 48)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn va(self) -> Va {
        self.0 & VA_MASK
    }

    pub fn meta(self) -> u16 {
        (self.0 >> 48) as u16
    }

    pub fn strip(self) -> Va {
        self.va()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckOutcome {
    Pass,
    Fail,
}

impl CheckOutcome {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Self::Pass
        } else {
            Self::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Self::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tagged_pointer_split() {
        let p = TaggedPointer::new(0x7fff_1234_5678, 0xbeef);
        assert_eq!(p.raw(), 0xbeef_7fff_1234_5678);
        assert_eq!(p.strip(), 0x7fff_1234_5678);
        assert_eq!(p.meta(), 0xbeef);
    }
}
