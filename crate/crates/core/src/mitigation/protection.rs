use super::{
    AosUnit, C3Unit, CaliformsUnit, CheckOutcome, CheckPlacement, TagCheckUnit, TaggedPointer,
};
use crate::sim::ExceptionKind;
use crate::Va;

/// Hardware check unit attached to the data path. ASLR needs none (its check
/// is the MMU's mapping check) and pointer authentication runs as explicit
/// micro-ops, so both use `None` here.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Protection {
    #[default]
    None,
    Califorms(CaliformsUnit),
    Aos(AosUnit),
    Tag(TagCheckUnit),
    C3(C3Unit),
}

/// What the protection unit decided for one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardVerdict {
    /// Address presented to the MMU and the cache.
    pub addr: Va,
    /// The mitigation's own check, if it has one for this access.
    pub check: Option<(CheckOutcome, ExceptionKind, CheckPlacement)>,
    /// C3: the pointer whose keystream encrypts the data.
    pub data_domain: Option<u64>,
}

impl GuardVerdict {
    fn plain(addr: Va) -> Self {
        Self {
            addr,
            check: None,
            data_domain: None,
        }
    }
}

impl Protection {
    pub fn guard(&self, ptr: u64, width: u64) -> GuardVerdict {
        match self {
            Protection::None => GuardVerdict::plain(ptr),
            Protection::Califorms(unit) => GuardVerdict {
                check: Some((
                    unit.check(ptr, width),
                    ExceptionKind::RedzoneAccess,
                    CheckPlacement::ValueSubstitute,
                )),
                ..GuardVerdict::plain(ptr)
            },
            Protection::Aos(unit) => {
                let p = TaggedPointer(ptr);
                GuardVerdict {
                    addr: p.strip(),
                    check: Some((
                        unit.aos_bound_check(p, width),
                        ExceptionKind::CheckFailure,
                        CheckPlacement::Parallel,
                    )),
                    data_domain: None,
                }
            }
            Protection::Tag(unit) => GuardVerdict {
                addr: unit.strip(ptr),
                check: Some((
                    unit.mte_check(ptr, width),
                    ExceptionKind::CheckFailure,
                    unit.placement,
                )),
                data_domain: None,
            },
            Protection::C3(unit) => match unit.codec.c3_decrypt_addr(ptr).va() {
                Some(va) => GuardVerdict {
                    addr: va,
                    check: None,
                    data_domain: unit.data_domain(ptr),
                },
                // Left non-canonical so the MMU rejects it.
                None => GuardVerdict::plain(ptr),
            },
        }
    }

    /// C3 data transform for `data` accessed through `domain`.
    pub fn transform_data(&self, data: &[u8], domain: Option<u64>) -> Vec<u8> {
        match (self, domain) {
            (Protection::C3(unit), Some(ca)) => super::c3_data_xor(data, ca, &unit.keystream),
            _ => data.to_vec(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protection::None => "none",
            Protection::Califorms(_) => "califorms",
            Protection::Aos(_) => "aos",
            Protection::Tag(_) => "tag",
            Protection::C3(_) => "c3",
        }
    }
}
