use rand::Rng;

use super::CheckOutcome;
use crate::sim::{MachineState, Segment};
use crate::Va;

/// Address check performed by the MMU: pass iff `addr` lies in a mapped
/// segment's effective range `[base + rand_offset, base + rand_offset + len)`.
pub fn aslr_check(addr: Va, segments: &[Segment]) -> CheckOutcome {
    CheckOutcome::from_bool(segments.iter().any(|s| s.mapped && s.contains(addr, 1)))
}

/// Randomizes the offsets of named segments in `align`-sized steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aslr {
    pub segments: Vec<String>,
    pub entropy_bits: u32,
    pub align: u64,
}

impl Aslr {
    pub fn new(segments: &[&str], entropy_bits: u32) -> Self {
        assert!(entropy_bits <= 63);
        Self {
            segments: segments.iter().map(|s| s.to_string()).collect(),
            entropy_bits,
            align: 0x1000,
        }
    }

    pub fn draw_offset<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.gen_range(0..(1u64 << self.entropy_bits))
            .wrapping_mul(self.align)
    }

    pub fn randomize<R: Rng>(&self, state: &mut MachineState, rng: &mut R) {
        for name in &self.segments {
            let offset = self.draw_offset(rng);
            if let Some(seg) = state.segment_mut(name) {
                seg.rand_offset = offset;
            }
        }
    }
}

/// ASLR whose offsets are re-drawn every `interval_ms` (`None` = never).
#[derive(Debug, Clone, PartialEq)]
pub struct Morpheus {
    pub aslr: Aslr,
    pub interval_ms: Option<f64>,
    epoch: u64,
}

impl Morpheus {
    pub const DEFAULT_INTERVAL_MS: f64 = 50.0;
    pub const ENTROPY_BITS: u32 = 60;

    pub fn new(aslr: Aslr, interval_ms: Option<f64>) -> Self {
        Self {
            aslr,
            interval_ms,
            epoch: 0,
        }
    }

    /// Re-draw every randomized segment offset.
    pub fn morpheus_rerandomize<R: Rng>(&mut self, state: &mut MachineState, rng: &mut R) {
        self.aslr.randomize(state, rng);
        self.epoch += 1;
    }

    /// Advance the model clock to `now_ms`; re-randomizes once if a window
    /// boundary was crossed. Returns whether it did.
    pub fn tick<R: Rng>(&mut self, state: &mut MachineState, now_ms: f64, rng: &mut R) -> bool {
        let Some(interval) = self.interval_ms else {
            return false;
        };
        let epoch = (now_ms / interval).floor() as u64;
        if epoch > self.epoch {
            self.aslr.randomize(state, rng);
            self.epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn heap() -> Vec<Segment> {
        let mut s = Segment::data("heap", 0x1000_0000, 0x1000);
        s.rand_offset = 0x7000;
        vec![s]
    }

    #[test]
    fn range_start_passes_and_end_fails() {
        let segs = heap();
        assert!(aslr_check(0x1000_7000, &segs).passed());
        assert!(!aslr_check(0x1000_8000, &segs).passed());
    }

    #[test]
    fn exhaustive_offset_sweep_finds_only_truth() {
        let aslr = Aslr::new(&["heap"], 12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut state = MachineState::new(0);
        state
            .segments
            .push(Segment::data("heap", 0x1000_0000, 0x1000));
        aslr.randomize(&mut state, &mut rng);
        let truth = state.segment("heap").unwrap().rand_offset;
        let passing: Vec<u64> = (0..1u64 << 12)
            .map(|k| k * 0x1000)
            .filter(|off| aslr_check(0x1000_0000 + off, &state.segments).passed())
            .collect();
        assert_eq!(passing, vec![truth]);
    }

    #[test]
    fn infinite_interval_never_rerandomizes() {
        let mut m = Morpheus::new(Aslr::new(&["heap"], 12), None);
        let mut state = MachineState::new(0);
        state
            .segments
            .push(Segment::data("heap", 0x1000_0000, 0x1000));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        assert!(!m.tick(&mut state, 1e9, &mut rng));
        let mut m = Morpheus::new(Aslr::new(&["heap"], 12), Some(50.0));
        assert!(!m.tick(&mut state, 49.9, &mut rng));
        assert!(m.tick(&mut state, 50.0, &mut rng));
        assert!(!m.tick(&mut state, 60.0, &mut rng));
    }
}
