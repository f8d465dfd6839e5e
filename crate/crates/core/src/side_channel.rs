//! Cache-timing receivers. They only touch the cache, never architectural
//! state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::build_eviction_set;
use crate::sim::Machine;
use crate::Va;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Probed addresses, in the order they were timed.
    pub addrs: Vec<Va>,
    pub latencies: Vec<u64>,
    pub hits: Vec<bool>,
    pub miss_count: usize,
}

impl ProbeReport {
    fn from_latencies(
        addrs: Vec<Va>,
        latencies: Vec<u64>,
        hit_latency: u64,
        miss_latency: u64,
    ) -> Self {
        // Threshold halfway between the two latencies.
        let threshold = (hit_latency + miss_latency) / 2;
        let hits: Vec<bool> = latencies.iter().map(|&l| l < threshold).collect();
        let miss_count = hits.iter().filter(|&&h| !h).count();
        Self {
            addrs,
            latencies,
            hits,
            miss_count,
        }
    }

    pub fn hit_indices(&self) -> Vec<usize> {
        self.hits
            .iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Seeded timing noise: each probe's hit/miss outcome flips with a fixed
/// probability.
#[derive(Debug, Clone)]
pub struct Noise {
    pub flip_probability: f64,
    rng: ChaCha8Rng,
}

impl Noise {
    pub fn new(seed: u64, flip_probability: f64) -> Self {
        assert!((0.0..=1.0).contains(&flip_probability));
        Self {
            flip_probability,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn perturb(&mut self, latencies: &mut [u64], hit_latency: u64, miss_latency: u64) {
        for l in latencies {
            if self.rng.gen_bool(self.flip_probability) {
                *l = if *l == hit_latency {
                    miss_latency
                } else {
                    hit_latency
                };
            }
        }
    }
}

fn timed(m: &mut Machine, addrs: Vec<Va>, noise: Option<&mut Noise>) -> ProbeReport {
    let mut latencies: Vec<u64> = addrs.iter().map(|&a| m.cache.access(a).latency).collect();
    let g = *m.cache.geometry();
    if let Some(n) = noise {
        n.perturb(&mut latencies, g.hit_latency, g.miss_latency);
    }
    ProbeReport::from_latencies(addrs, latencies, g.hit_latency, g.miss_latency)
}

/// Flush `lines`, run the victim, then time a reload of each line.
pub fn flush_reload<T>(
    m: &mut Machine,
    lines: &[Va],
    noise: Option<&mut Noise>,
    victim: impl FnOnce(&mut Machine) -> T,
) -> (ProbeReport, T) {
    for &l in lines {
        m.cache.flush(l);
    }
    let out = victim(m);
    (timed(m, lines.to_vec(), noise), out)
}

/// Fill `target_set` with an eviction set drawn from `region_base`, run the
/// victim, then time the eviction set in reverse order. Reverse order makes
/// the miss count equal the number of lines the victim brought into the set.
pub fn prime_probe<T>(
    m: &mut Machine,
    target_set: usize,
    region_base: Va,
    noise: Option<&mut Noise>,
    victim: impl FnOnce(&mut Machine) -> T,
) -> (ProbeReport, T) {
    let evset = build_eviction_set(m.cache.geometry(), target_set, region_base);
    for &a in &evset {
        m.cache.access(a);
    }
    let out = victim(m);
    let reversed: Vec<Va> = evset.into_iter().rev().collect();
    (timed(m, reversed, noise), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::layout::{probe_line, ATTACKER_BASE};
    use crate::sim::MachineConfig;

    fn lines() -> Vec<Va> {
        (0..256).map(probe_line).collect()
    }

    #[test]
    fn reload_marks_exactly_the_touched_lines() {
        let mut m = Machine::new(MachineConfig::default());
        let (r, _) = flush_reload(&mut m, &lines(), None, |m| {
            m.cache.access(probe_line(0x2a));
        });
        assert_eq!(r.hit_indices(), vec![0x2a]);
        let (r, _) = flush_reload(&mut m, &lines(), None, |_| ());
        assert!(r.hit_indices().is_empty());
        let (r, _) = flush_reload(&mut m, &lines(), None, |m| {
            m.cache.access(probe_line(3));
            m.cache.access(probe_line(200));
        });
        assert_eq!(r.hit_indices(), vec![3, 200]);
    }

    #[test]
    fn prime_probe_counts_victim_lines() {
        let mut m = Machine::new(MachineConfig::default());
        let (idle, _) = prime_probe(&mut m, 17, ATTACKER_BASE, None, |_| ());
        assert_eq!(idle.miss_count, 0);
        for n in 1..=8u64 {
            let (r, _) = prime_probe(&mut m, 17, ATTACKER_BASE, None, |m| {
                for k in 0..n {
                    m.cache.access(0x1000_0440 + k * 4096);
                }
            });
            assert_eq!(r.miss_count as u64, n);
        }
    }

    #[test]
    fn receivers_agree_on_a_touched_set() {
        let mut m = Machine::new(MachineConfig::default());
        let target = probe_line(17);
        let set = m.cache.index(target);
        let (fr, _) = flush_reload(&mut m, &[target], None, |m| {
            m.cache.access(target);
        });
        let (pp, _) = prime_probe(&mut m, set, ATTACKER_BASE, None, |m| {
            m.cache.flush(target);
            m.cache.access(target);
        });
        assert_eq!(fr.hits[0], pp.miss_count > 0);
    }

    #[test]
    fn noise_flips_at_roughly_the_configured_rate() {
        let mut m = Machine::new(MachineConfig::default());
        let mut noise = Noise::new(5, 0.1);
        let (r, _) = flush_reload(&mut m, &lines(), Some(&mut noise), |_| ());
        let flips = r.hit_indices().len();
        assert!((5..=60).contains(&flips), "{flips}");
    }
}
