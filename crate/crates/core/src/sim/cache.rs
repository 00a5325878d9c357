//! Sliced, set-associative metadata cache with LRU replacement and
//! write-back / write-allocate policy.
//!
//! Address bits `[5, 5 + slice_bits)` select the slice, the next `set_bits`
//! select the set, and the rest form the tag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::metadata::METADATA_LINE_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataCacheConfig {
    pub total_bytes: usize,
    pub slices: usize,
    pub line_bytes: usize,
    pub ways: usize,
}

impl Default for MetadataCacheConfig {
    fn default() -> Self {
        Self {
            total_bytes: 64 * 1024,
            slices: 8,
            line_bytes: METADATA_LINE_BYTES,
            ways: 4,
        }
    }
}

impl MetadataCacheConfig {
    pub fn with_total_kb(kb: usize) -> Result<Self> {
        let cfg = Self {
            total_bytes: kb * 1024,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sets_per_slice(&self) -> usize {
        self.total_bytes / (self.slices * self.ways * self.line_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        let pow2 = |n: usize| n > 0 && n.is_power_of_two();
        if self.line_bytes != METADATA_LINE_BYTES {
            return Err(Error::Config(format!(
                "metadata lines are {METADATA_LINE_BYTES} bytes, got {}",
                self.line_bytes
            )));
        }
        if !pow2(self.slices) || self.ways == 0 {
            return Err(Error::Config(format!(
                "need a power-of-two slice count and at least one way (slices {}, ways {})",
                self.slices, self.ways
            )));
        }
        let sets = self.sets_per_slice();
        if !pow2(sets) || sets * self.slices * self.ways * self.line_bytes != self.total_bytes {
            return Err(Error::Config(format!(
                "{} bytes do not divide into a power-of-two set count",
                self.total_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Miss { evicted_dirty: bool },
}

#[derive(Debug, Clone, Copy, Default)]
struct Line {
    tag: u64,
    valid: bool,
    dirty: bool,
    last_use: u64,
}

#[derive(Debug, Clone)]
pub struct MetadataCache {
    cfg: MetadataCacheConfig,
    slice_bits: u32,
    set_bits: u32,
    lines: Vec<Line>,
    clock: u64,
    pub hits: u64,
    pub misses: u64,
    pub dirty_evictions: u64,
}

impl MetadataCache {
    pub fn new(cfg: MetadataCacheConfig) -> Result<Self> {
        cfg.validate()?;
        let sets = cfg.sets_per_slice();
        Ok(Self {
            cfg,
            slice_bits: cfg.slices.trailing_zeros(),
            set_bits: sets.trailing_zeros(),
            lines: vec![Line::default(); cfg.slices * sets * cfg.ways],
            clock: 0,
            hits: 0,
            misses: 0,
            dirty_evictions: 0,
        })
    }

    pub fn config(&self) -> &MetadataCacheConfig {
        &self.cfg
    }

    /// `(slice, set, tag)` of a metadata byte address.
    pub fn locate(&self, address: u64) -> (usize, usize, u64) {
        let line = address >> METADATA_LINE_BYTES.trailing_zeros();
        let slice = (line & ((1 << self.slice_bits) - 1)) as usize;
        let set = ((line >> self.slice_bits) & ((1 << self.set_bits) - 1)) as usize;
        let tag = line >> (self.slice_bits + self.set_bits);
        (slice, set, tag)
    }

    pub fn access(&mut self, address: u64, is_write: bool) -> CacheOutcome {
        let (slice, set, tag) = self.locate(address);
        let ways = self.cfg.ways;
        let base = (slice << self.set_bits | set) * ways;
        self.clock += 1;
        let now = self.clock;
        let group = &mut self.lines[base..base + ways];

        if let Some(line) = group.iter_mut().find(|l| l.valid && l.tag == tag) {
            line.last_use = now;
            line.dirty |= is_write;
            self.hits += 1;
            return CacheOutcome::Hit;
        }

        let victim = group
            .iter_mut()
            .min_by_key(|l| (l.valid, l.last_use))
            .expect("at least one way");
        let evicted_dirty = victim.valid && victim.dirty;
        *victim = Line {
            tag,
            valid: true,
            dirty: is_write,
            last_use: now,
        };
        self.misses += 1;
        if evicted_dirty {
            self.dirty_evictions += 1;
        }
        CacheOutcome::Miss { evicted_dirty }
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            return 0.0;
        }
        self.hits as f64 / total as f64
    }
}
