use crate::crypto::{Keystream, ToyBlockCipher};
use crate::Va;

/// Low address bits that stay in plaintext inside a cryptographic address.
pub const OFFSET_BITS: u32 = 20;
/// Marks a pointer as a cryptographic address.
pub const CA_MARKER: u64 = 1 << 63;
pub const VERSIONS: u64 = 16;

/// Outcome of decoding a 64-bit pointer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C3Decode {
    /// No marker bit: a legacy pointer used as-is.
    Plain(Va),
    Encrypted {
        va: Va,
        version: u8,
    },
    /// Marker set but the reserved bits are non-zero. Decodes to nothing
    /// mapped.
    Malformed,
}

impl C3Decode {
    pub fn va(self) -> Option<Va> {
        match self {
            C3Decode::Plain(va) | C3Decode::Encrypted { va, .. } => Some(va),
            C3Decode::Malformed => None,
        }
    }
}

/// Address encryption: `[marker | 0.. | E(upper address, version) | offset]`.
/// The offset passes through; the upper address bits and the 4-bit version
/// are encrypted together, so the 16 versions of one address give 16
/// distinct CAs that all decode to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C3Codec {
    cipher: ToyBlockCipher,
    address_bits: u32,
}

impl C3Codec {
    /// `address_bits` of VA above the offset are encrypted; 28 covers the
    /// full 48-bit space, smaller values shrink the search space for tests.
    pub fn new(key: u64, address_bits: u32) -> Self {
        assert!(address_bits.is_multiple_of(2) && (2..=28).contains(&address_bits));
        Self {
            cipher: ToyBlockCipher::new(key, address_bits + 4),
            address_bits,
        }
    }

    pub fn address_bits(&self) -> u32 {
        self.address_bits
    }

    pub fn ciphertext_bits(&self) -> u32 {
        self.address_bits + 4
    }

    fn offset_mask() -> u64 {
        (1 << OFFSET_BITS) - 1
    }

    /// Largest VA (exclusive) this codec can encrypt.
    pub fn va_limit(&self) -> u64 {
        1 << (OFFSET_BITS + self.address_bits)
    }

    pub fn c3_encrypt_addr(&self, va: Va, version: u8) -> u64 {
        assert!(
            va < self.va_limit(),
            "VA {va:#x} outside the encrypted range"
        );
        assert!((version as u64) < VERSIONS);
        let upper = va >> OFFSET_BITS;
        let ct = self.cipher.encrypt_block(upper << 4 | version as u64);
        self.ca_from_parts(ct, va & Self::offset_mask())
    }

    /// Assemble a CA from a raw ciphertext and a plaintext offset.
    pub fn ca_from_parts(&self, ciphertext: u64, offset: u64) -> u64 {
        CA_MARKER | ciphertext << OFFSET_BITS | (offset & Self::offset_mask())
    }

    /// Split a CA into its ciphertext and plaintext offset.
    pub fn split(&self, ca: u64) -> (u64, u64) {
        ((ca & !CA_MARKER) >> OFFSET_BITS, ca & Self::offset_mask())
    }

    pub fn c3_decrypt_addr(&self, ptr: u64) -> C3Decode {
        if ptr & CA_MARKER == 0 {
            return C3Decode::Plain(ptr);
        }
        let body = ptr & !CA_MARKER;
        let ct = body >> OFFSET_BITS;
        if ct >> self.ciphertext_bits() != 0 {
            return C3Decode::Malformed;
        }
        let plain = self.cipher.decrypt_block(ct);
        C3Decode::Encrypted {
            va: (plain >> 4) << OFFSET_BITS | (body & Self::offset_mask()),
            version: (plain & 0xf) as u8,
        }
    }

    /// Every CA decoding to `va`, indexed by version.
    pub fn synonyms(&self, va: Va) -> Vec<u64> {
        (0..VERSIONS as u8)
            .map(|v| self.c3_encrypt_addr(va, v))
            .collect()
    }
}

/// Keystream byte for the byte at `ca`. The stream is keyed by the CA of the
/// enclosing 8-byte word, so every byte of a word shares one key.
fn keystream_byte(ks: &Keystream, ca: u64) -> u8 {
    ks.prp_keystream(ca & !7, 8)[(ca & 7) as usize]
}

/// XOR `data` (located at `ca`) with the CA-derived keystream. Symmetric.
pub fn c3_data_xor(data: &[u8], ca: u64, ks: &Keystream) -> Vec<u8> {
    data.iter()
        .enumerate()
        .map(|(i, &b)| b ^ keystream_byte(ks, ca.wrapping_add(i as u64)))
        .collect()
}

/// Codec plus data keystream as consulted by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct C3Unit {
    pub codec: C3Codec,
    pub keystream: Keystream,
}

impl C3Unit {
    pub fn new(key: u64, address_bits: u32) -> Self {
        Self {
            codec: C3Codec::new(key, address_bits),
            keystream: Keystream::new(key.rotate_left(29) ^ 0xc3c3_c3c3),
        }
    }

    /// The pointer whose keystream applies, if data behind `ptr` is
    /// encrypted.
    pub fn data_domain(&self, ptr: u64) -> Option<u64> {
        (ptr & CA_MARKER != 0).then_some(ptr)
    }
}
