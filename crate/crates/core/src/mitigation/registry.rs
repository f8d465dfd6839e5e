use serde::{Deserialize, Serialize};

use super::{CheckPlacement, Classification, MitigationDescriptor, SecretSpec, SpoofableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MitigationId {
    StackCanary,
    Aslr,
    Morpheus,
    Califorms,
    Aos,
    NoFatTemporal,
    C3,
    ArmPa,
    ArmMte,
    SparcAdi,
    Cheri,
    IntelMpx,
    Hardbound,
    Watchdog,
    WatchdogLite,
    Chex86,
    ArmBti,
    IntelCet,
    Rest,
    Zero,
    NoFatSpatial,
    CaliformsAdjacent,
}

impl MitigationId {
    pub const ALL: [MitigationId; 22] = [
        MitigationId::StackCanary,
        MitigationId::Aslr,
        MitigationId::Morpheus,
        MitigationId::Califorms,
        MitigationId::Aos,
        MitigationId::NoFatTemporal,
        MitigationId::C3,
        MitigationId::ArmPa,
        MitigationId::ArmMte,
        MitigationId::SparcAdi,
        MitigationId::Cheri,
        MitigationId::IntelMpx,
        MitigationId::Hardbound,
        MitigationId::Watchdog,
        MitigationId::WatchdogLite,
        MitigationId::Chex86,
        MitigationId::ArmBti,
        MitigationId::IntelCet,
        MitigationId::Rest,
        MitigationId::Zero,
        MitigationId::NoFatSpatial,
        MitigationId::CaliformsAdjacent,
    ];

    /// Mitigations with an executable model whose checks are distinct.
    /// Morpheus reuses the ASLR check and differs only in re-randomization.
    pub const EXECUTABLE: [MitigationId; 7] = [
        MitigationId::StackCanary,
        MitigationId::Aslr,
        MitigationId::Califorms,
        MitigationId::Aos,
        MitigationId::NoFatTemporal,
        MitigationId::C3,
        MitigationId::ArmPa,
    ];

    pub fn key(self) -> &'static str {
        match self {
            MitigationId::StackCanary => "stack-canary",
            MitigationId::Aslr => "aslr",
            MitigationId::Morpheus => "morpheus",
            MitigationId::Califorms => "califorms",
            MitigationId::Aos => "aos",
            MitigationId::NoFatTemporal => "no-fat-temporal",
            MitigationId::C3 => "c3",
            MitigationId::ArmPa => "arm-pa",
            MitigationId::ArmMte => "arm-mte",
            MitigationId::SparcAdi => "sparc-adi",
            MitigationId::Cheri => "cheri",
            MitigationId::IntelMpx => "intel-mpx",
            MitigationId::Hardbound => "hardbound",
            MitigationId::Watchdog => "watchdog",
            MitigationId::WatchdogLite => "watchdog-lite",
            MitigationId::Chex86 => "chex86",
            MitigationId::ArmBti => "arm-bti",
            MitigationId::IntelCet => "intel-cet",
            MitigationId::Rest => "rest",
            MitigationId::Zero => "zero",
            MitigationId::NoFatSpatial => "no-fat-spatial",
            MitigationId::CaliformsAdjacent => "califorms-adjacent",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MitigationId::StackCanary => "Stack Canary",
            MitigationId::Aslr => "ASLR",
            MitigationId::Morpheus => "Morpheus",
            MitigationId::Califorms => "Califorms (non-adjacent)",
            MitigationId::Aos => "AOS",
            MitigationId::NoFatTemporal => "No-FAT (temporal)",
            MitigationId::C3 => "C3",
            MitigationId::ArmPa => "ARM PA",
            MitigationId::ArmMte => "ARM MTE",
            MitigationId::SparcAdi => "SPARC ADI",
            MitigationId::Cheri => "CHERI",
            MitigationId::IntelMpx => "Intel MPX",
            MitigationId::Hardbound => "Hardbound",
            MitigationId::Watchdog => "Watchdog",
            MitigationId::WatchdogLite => "WatchdogLite",
            MitigationId::Chex86 => "CHEx86",
            MitigationId::ArmBti => "ARM BTI",
            MitigationId::IntelCet => "Intel CET",
            MitigationId::Rest => "REST",
            MitigationId::Zero => "ZERO",
            MitigationId::NoFatSpatial => "No-FAT (spatial)",
            MitigationId::CaliformsAdjacent => "Califorms (adjacent)",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.key() == key)
    }

    pub fn descriptor(self) -> MitigationDescriptor {
        descriptor(self)
    }
}

impl std::fmt::Display for MitigationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

fn secret(kind: &str, entropy_bits: u32, resides_in_vm: bool) -> Option<SecretSpec> {
    Some(SecretSpec {
        kind: kind.to_string(),
        entropy_bits,
        resides_in_vm,
    })
}

fn spoofable(
    id: MitigationId,
    kind: SpoofableKind,
    placement: Option<CheckPlacement>,
    secret: Option<SecretSpec>,
    executable: bool,
) -> MitigationDescriptor {
    MitigationDescriptor {
        id,
        name: id.display_name().to_string(),
        classification: Classification::Spoofable(kind),
        placement,
        secret,
        rerandomize_interval_ms: None,
        executable,
        program_data_exposed: None,
    }
}

fn tamperproof(id: MitigationId, program_data_exposed: bool) -> MitigationDescriptor {
    MitigationDescriptor {
        id,
        name: id.display_name().to_string(),
        classification: Classification::Unspoofable,
        placement: None,
        secret: None,
        rerandomize_interval_ms: None,
        executable: false,
        program_data_exposed: Some(program_data_exposed),
    }
}

fn descriptor(id: MitigationId) -> MitigationDescriptor {
    use CheckPlacement::*;
    use MitigationId::*;
    use SpoofableKind::*;
    match id {
        // The canary compare is a software sequence, not a hardware check
        // node, so it has no placement.
        StackCanary => spoofable(
            id,
            TamperableMetadata,
            None,
            secret("canary", 64, true),
            true,
        ),
        Aslr => spoofable(
            id,
            AddressLayoutRandomization,
            Some(SequentialGuard),
            secret("segment offset", 28, true),
            true,
        ),
        Morpheus => MitigationDescriptor {
            rerandomize_interval_ms: Some(50.0),
            ..spoofable(
                id,
                AddressLayoutRandomization,
                Some(SequentialGuard),
                secret("segment offset", 60, true),
                true,
            )
        },
        Califorms => spoofable(
            id,
            AddressLayoutRandomization,
            Some(ValueSubstitute),
            secret("redzone size", 3, true),
            true,
        ),
        Aos => spoofable(
            id,
            TamperableMetadata,
            Some(Parallel),
            secret("PAC", 16, true),
            true,
        ),
        NoFatTemporal => spoofable(
            id,
            TamperableMetadata,
            Some(SequentialGuard),
            secret("allocation tag", 16, false),
            true,
        ),
        C3 => spoofable(
            id,
            TamperableMetadata,
            Some(SequentialGuard),
            secret("cryptographic address", 28, false),
            true,
        ),
        ArmPa => spoofable(
            id,
            TamperableMetadata,
            Some(SequentialGuard),
            secret("PAC", 16, false),
            true,
        ),
        ArmMte => spoofable(
            id,
            TamperableMetadata,
            None,
            secret("memory tag", 4, false),
            true,
        ),
        SparcAdi => spoofable(
            id,
            TamperableMetadata,
            None,
            secret("memory tag", 4, false),
            false,
        ),
        Cheri | IntelMpx | Hardbound | Watchdog | WatchdogLite | Chex86 | ArmBti | IntelCet
        | Rest | CaliformsAdjacent => tamperproof(id, true),
        Zero | NoFatSpatial => tamperproof(id, false),
    }
}

/// Every registry entry in display order.
pub fn registry() -> Vec<MitigationDescriptor> {
    MitigationId::ALL.iter().map(|id| id.descriptor()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_spoofable_entries() {
        let spoofable: Vec<_> = registry()
            .into_iter()
            .filter(|d| d.classification.is_spoofable())
            .collect();
        assert_eq!(spoofable.len(), 10);
    }

    #[test]
    fn unspoofable_entries_carry_no_secret() {
        for d in registry() {
            if !d.classification.is_spoofable() {
                assert!(d.secret.is_none(), "{}", d.name);
                assert!(d.placement.is_none());
            }
        }
    }

    #[test]
    fn keys_round_trip() {
        for id in MitigationId::ALL {
            assert_eq!(MitigationId::from_key(id.key()), Some(id));
        }
    }
}
