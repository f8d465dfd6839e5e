use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::isa::NUM_REGS;
use crate::{Va, VA_BITS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub base: Va,
    pub len: u64,
    pub rand_offset: u64,
    pub mapped: bool,
    pub executable: bool,
}

impl Segment {
    pub fn data(name: &str, base: Va, len: u64) -> Self {
        Self {
            name: name.to_string(),
            base,
            len,
            rand_offset: 0,
            mapped: true,
            executable: false,
        }
    }

    pub fn code(name: &str, base: Va, len: u64) -> Self {
        Self {
            executable: true,
            ..Self::data(name, base, len)
        }
    }

    pub fn start(&self) -> Va {
        self.base.wrapping_add(self.rand_offset)
    }

    pub fn end(&self) -> Va {
        self.start().wrapping_add(self.len)
    }

    /// Whether `[addr, addr + width)` lies inside the effective range.
    pub fn contains(&self, addr: Va, width: u64) -> bool {
        let start = self.start();
        addr >= start && addr.checked_add(width).is_some_and(|e| e <= self.end())
    }
}

/// Sparse little-endian byte memory over the 48-bit VA space. Bytes never
/// written read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Memory {
    bytes: BTreeMap<Va, u8>,
}

impl Memory {
    pub fn read_byte(&self, addr: Va) -> u8 {
        self.bytes.get(&addr).copied().unwrap_or(0)
    }

    /// Previous byte state (`None` = never written), for undo logs.
    pub fn raw_byte(&self, addr: Va) -> Option<u8> {
        self.bytes.get(&addr).copied()
    }

    pub fn restore_byte(&mut self, addr: Va, prev: Option<u8>) {
        match prev {
            Some(b) => {
                self.bytes.insert(addr, b);
            }
            None => {
                self.bytes.remove(&addr);
            }
        }
    }

    pub fn write_byte(&mut self, addr: Va, value: u8) {
        self.bytes.insert(addr, value);
    }

    pub fn read(&self, addr: Va, width: u8) -> u64 {
        (0..width as u64).fold(0u64, |acc, i| {
            acc | (self.read_byte(addr.wrapping_add(i)) as u64) << (8 * i)
        })
    }

    pub fn write(&mut self, addr: Va, width: u8, value: u64) {
        for i in 0..width as u64 {
            self.write_byte(addr.wrapping_add(i), (value >> (8 * i)) as u8);
        }
    }

    pub fn read_bytes(&self, addr: Va, len: usize) -> Vec<u8> {
        (0..len as u64).map(|i| self.read_byte(addr + i)).collect()
    }

    pub fn write_bytes(&mut self, addr: Va, data: &[u8]) {
        for (i, b) in data.iter().enumerate() {
            self.write_byte(addr + i as u64, *b);
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Architectural state plus the bookkeeping that must survive across runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineState {
    pub registers: [u64; NUM_REGS],
    pub memory: Memory,
    pub segments: Vec<Segment>,
    pub cycle: u64,
    pub hijacked: bool,
    pub rng_seed: u64,
}

impl MachineState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            registers: [0; NUM_REGS],
            memory: Memory::default(),
            segments: Vec::new(),
            cycle: 0,
            hijacked: false,
            rng_seed,
        }
    }

    /// Hash of the architectural part (registers and memory) only.
    pub fn arch_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.registers.hash(&mut h);
        self.memory.hash(&mut h);
        h.finish()
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut Segment> {
        self.segments.iter_mut().find(|s| s.name == name)
    }

    pub fn is_mapped(&self, addr: Va, width: u64) -> bool {
        addr >> VA_BITS == 0
            && self
                .segments
                .iter()
                .any(|s| s.mapped && s.contains(addr, width))
    }

    pub fn is_executable(&self, addr: Va) -> bool {
        addr >> VA_BITS == 0
            && self
                .segments
                .iter()
                .any(|s| s.mapped && s.executable && s.contains(addr, 1))
    }

    /// First mapped executable segment, used by the modulo-fetch countermeasure.
    pub fn code_segment(&self) -> Option<&Segment> {
        self.segments.iter().find(|s| s.mapped && s.executable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_range_is_half_open() {
        let mut s = Segment::data("heap", 0x1000_0000, 0x1000);
        s.rand_offset = 0x5000;
        assert!(s.contains(0x1000_5000, 8));
        assert!(!s.contains(0x1000_6000, 1));
        assert!(!s.contains(0x1000_5ffc, 8));
    }

    #[test]
    fn memory_is_little_endian() {
        let mut m = Memory::default();
        m.write(0x10, 8, 0x0807_0605_0403_0201);
        assert_eq!(m.read_byte(0x10), 1);
        assert_eq!(m.read(0x17, 1), 8);
        assert_eq!(m.read(0x12, 2), 0x0403);
    }
}
