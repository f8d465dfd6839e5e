//! Single-level, set-associative data cache with exact LRU replacement and
//! fixed hit/miss latencies. This is the modulation medium for every side
//! channel in the crate: the simulator has no noise, so a latency is either
//! `hit_latency` or `miss_latency` and nothing in between.

use serde::{Deserialize, Serialize};

use crate::Va;

/// Cache geometry and timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheGeometry {
    pub num_sets: usize,
    pub ways: usize,
    pub line_bytes: u64,
    pub hit_latency: u64,
    pub miss_latency: u64,
}

impl Default for CacheGeometry {
    fn default() -> Self {
        Self {
            num_sets: 64,
            ways: 8,
            line_bytes: 64,
            hit_latency: 4,
            miss_latency: 100,
        }
    }
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_sets == 0 {
            return Err("cache.num_sets must be > 0".into());
        }
        if self.ways == 0 {
            return Err("cache.ways must be > 0".into());
        }
        if self.line_bytes == 0 || !self.line_bytes.is_power_of_two() {
            return Err("cache.line_bytes must be a power of two".into());
        }
        if self.hit_latency >= self.miss_latency {
            return Err("cache.hit_latency must be below cache.miss_latency".into());
        }
        Ok(())
    }

    /// Set index of `addr`: `(addr / line_bytes) mod num_sets`.
    pub fn index(&self, addr: Va) -> usize {
        ((addr / self.line_bytes) % self.num_sets as u64) as usize
    }

    /// Line number (address with the in-line offset dropped).
    pub fn line(&self, addr: Va) -> u64 {
        addr / self.line_bytes
    }

    /// Bytes spanned by one full pass over every set.
    pub fn way_stride(&self) -> u64 {
        self.line_bytes * self.num_sets as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessResult {
    pub hit: bool,
    pub latency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheState {
    geometry: CacheGeometry,
    // Each set is ordered LRU-first: index 0 is evicted next, the back is MRU.
    sets: Vec<Vec<u64>>,
}

impl CacheState {
    pub fn new(geometry: CacheGeometry) -> Self {
        Self {
            sets: vec![Vec::with_capacity(geometry.ways); geometry.num_sets],
            geometry,
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn index(&self, addr: Va) -> usize {
        self.geometry.index(addr)
    }

    /// Touch `addr`: promote on hit, insert (evicting the LRU way if full)
    /// on miss.
    pub fn access(&mut self, addr: Va) -> AccessResult {
        let line = self.geometry.line(addr);
        let ways = self.geometry.ways;
        let set = &mut self.sets[self.geometry.index(addr)];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            let l = set.remove(pos);
            set.push(l);
            AccessResult {
                hit: true,
                latency: self.geometry.hit_latency,
            }
        } else {
            if set.len() == ways {
                set.remove(0);
            }
            set.push(line);
            AccessResult {
                hit: false,
                latency: self.geometry.miss_latency,
            }
        }
    }

    /// Remove the line holding `addr`. Absent lines are a no-op.
    pub fn flush(&mut self, addr: Va) {
        let line = self.geometry.line(addr);
        let set = &mut self.sets[self.geometry.index(addr)];
        set.retain(|&l| l != line);
    }

    /// Whether `addr` is cached. Does not update LRU state.
    pub fn contains(&self, addr: Va) -> bool {
        let line = self.geometry.line(addr);
        self.sets[self.geometry.index(addr)].contains(&line)
    }

    pub fn flush_all(&mut self) {
        for set in &mut self.sets {
            set.clear();
        }
    }

    /// Lines of one set in LRU order.
    pub fn set_lines(&self, set: usize) -> &[u64] {
        &self.sets[set]
    }

    /// Every cached line, sorted. Used to compare cache contents across a
    /// speculation window.
    pub fn resident_lines(&self) -> Vec<u64> {
        let mut lines: Vec<u64> = self.sets.iter().flatten().copied().collect();
        lines.sort_unstable();
        lines
    }

    /// `ways` distinct addresses inside `[region_base, ...)` that all index
    /// `target_set`. `region_base` is attacker-reserved memory; the addresses
    /// step by one full way stride so they never share a line.
    pub fn build_eviction_set(&self, target_set: usize, region_base: Va) -> Vec<Va> {
        build_eviction_set(&self.geometry, target_set, region_base)
    }
}

pub fn build_eviction_set(geometry: &CacheGeometry, target_set: usize, region_base: Va) -> Vec<Va> {
    assert!(target_set < geometry.num_sets, "target set out of range");
    let stride = geometry.way_stride();
    let aligned = region_base - region_base % stride;
    let first = aligned + target_set as u64 * geometry.line_bytes;
    (0..geometry.ways as u64)
        .map(|k| first + k * stride)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache() -> CacheState {
        CacheState::new(CacheGeometry::default())
    }

    #[test]
    fn second_access_hits() {
        let mut c = cache();
        let first = c.access(0x1000);
        assert!(!first.hit);
        assert_eq!(first.latency, 100);
        let second = c.access(0x1008);
        assert!(second.hit);
        assert_eq!(second.latency, 4);
    }

    #[test]
    fn lru_victim_is_evicted() {
        let mut c = cache();
        let set = c.build_eviction_set(5, 0x2000_0000);
        for &a in &set {
            c.access(a);
        }
        // One more conflicting line pushes out the oldest.
        let extra = set[7] + c.geometry().way_stride();
        assert_eq!(c.index(extra), 5);
        c.access(extra);
        assert!(!c.access(set[0]).hit);
        assert!(c.contains(set[2]));
    }

    #[test]
    fn flush_then_access_misses() {
        let mut c = cache();
        c.access(0x40);
        c.flush(0x40);
        assert!(!c.access(0x40).hit);
        // Flushing an absent line changes nothing.
        let before = c.clone();
        c.flush(0x9_0000);
        assert_eq!(before, c);
    }

    #[test]
    fn eviction_sets_map_to_target() {
        let g = CacheGeometry::default();
        let a = build_eviction_set(&g, 3, 0x2000_0000);
        let b = build_eviction_set(&g, 4, 0x2000_0000);
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|&x| g.index(x) == 3));
        assert!(a.iter().all(|x| !b.contains(x)));
        let one = CacheGeometry { ways: 1, ..g };
        assert_eq!(build_eviction_set(&one, 0, 0).len(), 1);
    }

    #[test]
    fn set_never_exceeds_ways() {
        let mut c = cache();
        for k in 0..100u64 {
            c.access(k * c.geometry().way_stride());
        }
        assert_eq!(c.set_lines(0).len(), 8);
    }
}
