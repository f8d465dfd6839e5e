use std::collections::HashSet;

use proptest::prelude::*;
use ssb_core::crypto::{Keystream, ToyBlockCipher};
use ssb_core::mitigation::{c3_data_xor, C3Codec, C3Decode};

#[test]
fn cipher_is_a_bijection_at_16_bits() {
    for key in [0u64, 1, 0x0123_4567_89ab_cdef, u64::MAX] {
        let c = ToyBlockCipher::new(key, 16);
        let mut seen = vec![false; 1 << 16];
        for x in 0..1u64 << 16 {
            let y = c.encrypt_block(x);
            assert!(y < 1 << 16);
            assert!(!seen[y as usize], "key {key:#x}: collision on {y:#x}");
            seen[y as usize] = true;
            assert_eq!(c.decrypt_block(y), x);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Victim data `p` sits encrypted under `ca1`; the attacker reads and
    /// writes through the synonym `ca2`. Reading gives the mask, writing
    /// `target ^ mask` makes the victim decrypt `target`.
    #[test]
    fn xor_mask_identity(key in any::<u64>(), p in any::<[u8; 8]>(), target in any::<[u8; 8]>(),
                         ca1 in any::<u64>(), ca2 in any::<u64>()) {
        let ks = Keystream::new(key);
        let stored = c3_data_xor(&p, ca1, &ks);
        let garbled = c3_data_xor(&stored, ca2, &ks);
        let mask: Vec<u8> = garbled.iter().zip(&p).map(|(g, p)| g ^ p).collect();
        let payload: Vec<u8> = target.iter().zip(&mask).map(|(t, m)| t ^ m).collect();
        let overwritten = c3_data_xor(&payload, ca2, &ks);
        prop_assert_eq!(c3_data_xor(&overwritten, ca1, &ks), target.to_vec());
        prop_assert_eq!(c3_data_xor(&stored, ca1, &ks), p.to_vec());
    }
}

#[test]
fn every_va_has_sixteen_synonyms() {
    let codec = C3Codec::new(0x5eed, 12);
    let mut rng = 0x1234_5678_u64;
    for _ in 0..100 {
        rng = rng
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let va = (rng >> 16) % codec.va_limit();
        let syn = codec.synonyms(va);
        assert_eq!(syn.iter().collect::<HashSet<_>>().len(), 16);
        for (version, &ca) in syn.iter().enumerate() {
            assert_eq!(
                codec.c3_decrypt_addr(ca),
                C3Decode::Encrypted {
                    va,
                    version: version as u8
                }
            );
        }
        // No other ciphertext decodes to this VA.
        let (_, offset) = codec.split(syn[0]);
        let hits = (0..1u64 << codec.ciphertext_bits())
            .filter(|&ct| codec.c3_decrypt_addr(codec.ca_from_parts(ct, offset)).va() == Some(va))
            .count();
        assert_eq!(hits, 16);
    }
}
