use super::TaggedPointer;
use crate::crypto::PacHasher;
use crate::sim::ExceptionKind;
use crate::{Va, VA_MASK};

/// Sign `ptr` under `context`: the PAC of the stripped address goes into
/// the upper 16 bits.
pub fn pa_sign(hasher: &PacHasher, ptr: Va, context: u64) -> TaggedPointer {
    let va = ptr & VA_MASK;
    TaggedPointer::new(va, hasher.compute_pac(va, context) as u16)
}

/// Recompute the PAC and compare it against the pointer's upper bits.
pub fn pa_auth(hasher: &PacHasher, ptr: TaggedPointer, context: u64) -> Result<Va, ExceptionKind> {
    if pa_sign(hasher, ptr.va(), context) == ptr {
        Ok(ptr.va())
    } else {
        Err(ExceptionKind::AuthFailure)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_then_auth_round_trips() {
        let h = PacHasher::new(0x1234, 16);
        let signed = pa_sign(&h, 0x40_1000, 7);
        assert_eq!(pa_auth(&h, signed, 7), Ok(0x40_1000));
        assert_eq!(
            pa_auth(&h, signed, 8).is_err(),
            h.compute_pac(0x40_1000, 8) != signed.meta() as u64
        );
    }

    #[test]
    fn flipped_meta_bit_fails() {
        let h = PacHasher::new(0x1234, 16);
        let signed = pa_sign(&h, 0x40_1000, 7);
        let flipped = TaggedPointer(signed.raw() ^ 1 << 50);
        assert_eq!(pa_auth(&h, flipped, 7), Err(ExceptionKind::AuthFailure));
    }

    #[test]
    fn exhaustive_pac_sweep_has_one_pass() {
        let h = PacHasher::new(0xfeed, 16);
        let va = 0x1000_2000;
        let truth = pa_sign(&h, va, 0).meta();
        let passing: Vec<u16> = (0..=u16::MAX)
            .filter(|&pac| pa_auth(&h, TaggedPointer::new(va, pac), 0).is_ok())
            .collect();
        assert_eq!(passing, vec![truth]);
    }
}
