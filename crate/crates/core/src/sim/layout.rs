//! Default address map shared by the victim templates and the attacker.

use super::Segment;
use crate::Va;

pub const CODE_BASE: Va = 0x40_0000;
pub const CODE_LEN: u64 = 0x1000;
pub const GLOBALS_BASE: Va = 0x60_0000;
pub const GLOBALS_LEN: u64 = 0x2000;
pub const PROBE_BASE: Va = 0x80_0000;
pub const PROBE_LINES: u64 = 256;
pub const PROBE_STRIDE: u64 = 64;
pub const HEAP_BASE: Va = 0x1000_0000;
pub const HEAP_LEN: u64 = 0x4_0000;
/// One-page mapping whose base is randomized under ASLR.
pub const MMAP_BASE: Va = 0x3000_0000;
pub const MMAP_LEN: u64 = 0x1000;
/// Attacker-owned memory used for eviction sets.
pub const ATTACKER_BASE: Va = 0x2000_0000;
pub const ATTACKER_LEN: u64 = 0x1_0000;
pub const STACK_BASE: Va = 0x7ff0_0000;
pub const STACK_LEN: u64 = 0x1_0000;
/// Unmapped page standing in for layout metadata kept in privileged memory
/// (e.g. the randomization offset).
pub const LAYOUT_META_BASE: Va = 0x7fff_0000_0000;
pub const LAYOUT_META_LEN: u64 = 0x1000;

pub fn default_segments() -> Vec<Segment> {
    let mut meta = Segment::data("layout_meta", LAYOUT_META_BASE, LAYOUT_META_LEN);
    meta.mapped = false;
    vec![
        Segment::code("code", CODE_BASE, CODE_LEN),
        Segment::data("globals", GLOBALS_BASE, GLOBALS_LEN),
        Segment::data("probe", PROBE_BASE, PROBE_LINES * PROBE_STRIDE),
        Segment::data("heap", HEAP_BASE, HEAP_LEN),
        Segment::data("mmap", MMAP_BASE, MMAP_LEN),
        Segment::data("attacker", ATTACKER_BASE, ATTACKER_LEN),
        Segment::data("stack", STACK_BASE, STACK_LEN),
        meta,
    ]
}

/// Initial stack pointer: 256 bytes below the top of the stack segment.
pub fn stack_top() -> Va {
    STACK_BASE + STACK_LEN - 0x100
}

pub fn probe_line(index: u64) -> Va {
    PROBE_BASE + index * PROBE_STRIDE
}
