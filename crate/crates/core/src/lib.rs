//! Simulator, mitigation models, attack harness and information-flow
//! analysis for speculative shield bypass attacks.

pub mod cache;
pub mod crypto;
pub mod harness;
pub mod mitigation;
pub mod side_channel;
pub mod sif;
pub mod sim;

/// A virtual address. Only the low [`VA_BITS`] bits are translated.
pub type Va = u64;

pub const VA_BITS: u32 = 48;
pub const VA_MASK: u64 = (1 << VA_BITS) - 1;
