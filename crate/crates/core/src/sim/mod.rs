//! Trace-driven replay over a snapshot.
//!
//! Events are post-cache memory accesses. Every entry an event touches costs
//! one metadata lookup and that entry's full compressed sectors, split between
//! device and buddy memory by its current size class. Writes recompress the
//! entry in place: its own class and metadata change, nothing else moves.
//!
//! Metadata and data are assumed to be fetched in parallel on a metadata miss,
//! which changes latency but not traffic, so the model ignores it.

pub mod cache;
pub mod cost;
pub mod trace;

use serde::{Deserialize, Serialize};

use crate::codec::{size_class, Block128, SizeClass, BLOCK_BYTES};
use crate::error::{Error, Result};
use crate::memory::analysis::{entry_access_split, snapshot_classes, AccessSplit};
use crate::memory::metadata::METADATA_LINE_BYTES;
use crate::memory::{effective_compression_ratio, BuddyLayout, GbbrConfig, MetadataStore, Placement, Snapshot, Targets};

pub use cache::{CacheOutcome, MetadataCache, MetadataCacheConfig};
pub use cost::{cost_estimate, CostModelParams};
pub use trace::{load_trace, Op, TraceEvent, WriteData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrafficCounters {
    pub device_bytes: u64,
    pub buddy_bytes: u64,
    pub metadata_fill_bytes: u64,
    pub metadata_writeback_bytes: u64,
    pub entry_accesses: u64,
    pub buddy_entry_accesses: u64,
}

/// Entries touched by one event and how many of them reached buddy memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventStat {
    pub entries: u32,
    pub buddy_entries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub window: usize,
    pub start_event: usize,
    pub end_event: usize,
    pub entry_accesses: u64,
    pub buddy_entry_accesses: u64,
    pub buddy_fraction: f64,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub events: usize,
    pub counters: TrafficCounters,
    pub metadata_hits: u64,
    pub metadata_misses: u64,
    pub metadata_hit_rate: f64,
    pub buddy_access_fraction: f64,
    pub compression_ratio: f64,
    pub baseline_logical_bytes: u64,
    pub estimated_slowdown: f64,
    pub cost_model: CostModelParams,
    pub metadata_cache: MetadataCacheConfig,
    pub windows: Vec<WindowStat>,
    #[serde(skip)]
    pub event_stats: Vec<EventStat>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from(
            "window,start_event,end_event,entry_accesses,buddy_entry_accesses,buddy_fraction,compression_ratio\n",
        );
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                w.window,
                w.start_event,
                w.end_event,
                w.entry_accesses,
                w.buddy_entry_accesses,
                w.buddy_fraction,
                w.compression_ratio
            ));
        }
        out
    }

    /// Re-derives the slowdown under different cost parameters.
    pub fn slowdown_with(&self, params: &CostModelParams) -> Result<f64> {
        if self.baseline_logical_bytes == 0 {
            return Ok(1.0);
        }
        cost_estimate(&self.counters, params, self.baseline_logical_bytes)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Replay state: a private copy of the snapshot data, current metadata and
/// the metadata cache.
pub struct Simulator {
    layout: BuddyLayout,
    data: Vec<Vec<u8>>,
    metadata: MetadataStore,
    cache: MetadataCache,
    counters: TrafficCounters,
    baseline_bytes: u64,
    writes: u64,
    event_stats: Vec<EventStat>,
}

impl Simulator {
    pub fn new(snapshot: &Snapshot, targets: &Targets, cache_cfg: MetadataCacheConfig) -> Result<Self> {
        let gbbr = GbbrConfig::sized_for(snapshot, targets)?;
        Self::with_gbbr(snapshot, targets, cache_cfg, gbbr)
    }

    pub fn with_gbbr(
        snapshot: &Snapshot,
        targets: &Targets,
        cache_cfg: MetadataCacheConfig,
        gbbr: GbbrConfig,
    ) -> Result<Self> {
        let layout = BuddyLayout::new(snapshot, targets, gbbr)?;
        let metadata = MetadataStore::from_classes(snapshot_classes(snapshot).into_iter().flatten());
        Ok(Self {
            layout,
            data: snapshot.allocations.iter().map(|a| a.data.clone()).collect(),
            metadata,
            cache: MetadataCache::new(cache_cfg)?,
            counters: TrafficCounters::default(),
            baseline_bytes: 0,
            writes: 0,
            event_stats: Vec::new(),
        })
    }

    pub fn layout(&self) -> &BuddyLayout {
        &self.layout
    }

    pub fn counters(&self) -> &TrafficCounters {
        &self.counters
    }

    pub fn cache(&self) -> &MetadataCache {
        &self.cache
    }

    pub fn metadata(&self) -> &MetadataStore {
        &self.metadata
    }

    pub fn class_of(&self, alloc_index: usize, entry: usize) -> SizeClass {
        self.metadata.get(self.layout.allocs()[alloc_index].first_entry + entry)
    }

    pub fn placement(&self, alloc_index: usize, entry: usize) -> Placement {
        self.layout.place(alloc_index, entry)
    }

    /// Current access split of an entry.
    pub fn split_of(&self, alloc_index: usize, entry: usize) -> AccessSplit {
        entry_access_split(self.class_of(alloc_index, entry), self.layout.allocs()[alloc_index].target)
    }

    pub fn block(&self, alloc_index: usize, entry: usize) -> Block128 {
        Block128::from_bytes(&self.data[alloc_index][entry * BLOCK_BYTES..(entry + 1) * BLOCK_BYTES])
    }

    /// Applies one event; `index` is only used in fault reports.
    pub fn apply(&mut self, index: usize, event: &TraceEvent) -> Result<EventStat> {
        let fault = |va| Error::Fault { va, event: Some(index) };
        if event.size_bytes == 0 {
            return Err(Error::Validation(format!("event {index} has zero size")));
        }
        let ai = self.layout.alloc_index_of(event.va).ok_or(fault(event.va))?;
        let rec = self.layout.allocs()[ai].record;
        let last = event.va.checked_add(event.size_bytes as u64 - 1).ok_or(fault(event.va))?;
        if !rec.contains(last) {
            return Err(fault(last));
        }
        let first_entry = ((event.va - rec.base_va) / BLOCK_BYTES as u64) as usize;
        let last_entry = ((last - rec.base_va) / BLOCK_BYTES as u64) as usize;

        let mut stat = EventStat::default();
        for e in first_entry..=last_entry {
            let split = match event.op {
                Op::Read => self.touch(ai, e, false),
                Op::Write => {
                    let entry_va = rec.base_va + (e * BLOCK_BYTES) as u64;
                    let lo = event.va.max(entry_va);
                    let hi = last.min(entry_va + BLOCK_BYTES as u64 - 1);
                    self.write_entry(ai, e, (lo - entry_va) as usize..=(hi - entry_va) as usize, (lo - event.va) as usize, &event.data);
                    self.touch(ai, e, true)
                }
            };
            stat.entries += 1;
            if split.touches_buddy() {
                stat.buddy_entries += 1;
            }
        }
        self.event_stats.push(stat);
        Ok(stat)
    }

    /// Metadata lookup plus data traffic for one entry.
    fn touch(&mut self, ai: usize, e: usize, is_write: bool) -> AccessSplit {
        let ordinal = self.layout.allocs()[ai].first_entry + e;
        let line = METADATA_LINE_BYTES as u64;
        if let CacheOutcome::Miss { evicted_dirty } = self.cache.access(self.layout.metadata_address(ordinal), is_write) {
            self.counters.metadata_fill_bytes += line;
            if evicted_dirty {
                self.counters.metadata_writeback_bytes += line;
            }
        }
        let split = self.split_of(ai, e);
        self.counters.device_bytes += split.device_bytes();
        self.counters.buddy_bytes += split.buddy_bytes();
        self.counters.entry_accesses += 1;
        if split.touches_buddy() {
            self.counters.buddy_entry_accesses += 1;
        }
        self.baseline_bytes += BLOCK_BYTES as u64;
        split
    }

    fn write_entry(
        &mut self,
        ai: usize,
        e: usize,
        bytes: std::ops::RangeInclusive<usize>,
        payload_offset: usize,
        data: &WriteData,
    ) {
        let ordinal = self.layout.allocs()[ai].first_entry + e;
        let entry_base = self.layout.allocs()[ai].record.base_va + (e * BLOCK_BYTES) as u64;
        let seq = self.writes;
        self.writes += 1;
        let class = match data {
            WriteData::Class(c) => *c,
            WriteData::Payload(p) => {
                let entry = &mut self.data[ai][e * BLOCK_BYTES..(e + 1) * BLOCK_BYTES];
                let n = bytes.end() - bytes.start() + 1;
                entry[bytes.clone()].copy_from_slice(&p[payload_offset..payload_offset + n]);
                size_class(&Block128::from_bytes(entry))
            }
            WriteData::Perturb => {
                let entry = &mut self.data[ai][e * BLOCK_BYTES..(e + 1) * BLOCK_BYTES];
                let seed = splitmix64(entry_base ^ seq.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for i in bytes {
                    let mask = splitmix64(seed.wrapping_add((i / 8) as u64));
                    entry[i] ^= (mask >> (8 * (i % 8))) as u8;
                }
                size_class(&Block128::from_bytes(entry))
            }
        };
        self.metadata.set(ordinal, class);
    }

    pub fn finish(self, snapshot: &Snapshot, targets: &Targets, cost: CostModelParams) -> Result<SimReport> {
        cost.validate()?;
        let c = self.counters;
        let buddy_access_fraction = if c.entry_accesses == 0 {
            0.0
        } else {
            c.buddy_entry_accesses as f64 / c.entry_accesses as f64
        };
        let estimated_slowdown = if self.baseline_bytes == 0 {
            1.0
        } else {
            cost_estimate(&c, &cost, self.baseline_bytes)?
        };
        let mut report = SimReport {
            events: self.event_stats.len(),
            counters: c,
            metadata_hits: self.cache.hits,
            metadata_misses: self.cache.misses,
            metadata_hit_rate: self.cache.hit_rate(),
            buddy_access_fraction,
            compression_ratio: effective_compression_ratio(snapshot, targets)?,
            baseline_logical_bytes: self.baseline_bytes,
            estimated_slowdown,
            cost_model: cost,
            metadata_cache: *self.cache.config(),
            windows: Vec::new(),
            event_stats: self.event_stats,
        };
        report.windows = timeseries_report(&report, 1)?;
        Ok(report)
    }
}

pub fn run_trace(
    snapshot: &Snapshot,
    targets: &Targets,
    trace: &[TraceEvent],
    cache_cfg: MetadataCacheConfig,
    cost_cfg: CostModelParams,
) -> Result<SimReport> {
    cost_cfg.validate()?;
    let mut sim = Simulator::new(snapshot, targets, cache_cfg)?;
    for (i, ev) in trace.iter().enumerate() {
        sim.apply(i, ev)?;
    }
    sim.finish(snapshot, targets, cost_cfg)
}

/// Splits the trace into `windows` runs of (near) equal event count. Window
/// `i` covers events `[i * n / windows, (i + 1) * n / windows)`.
pub fn timeseries_report(report: &SimReport, windows: usize) -> Result<Vec<WindowStat>> {
    if windows == 0 {
        return Err(Error::Config("need at least one window".into()));
    }
    let n = report.event_stats.len();
    Ok((0..windows)
        .map(|w| {
            let start = w * n / windows;
            let end = (w + 1) * n / windows;
            let (entries, buddy) = report.event_stats[start..end]
                .iter()
                .fold((0u64, 0u64), |(a, b), s| (a + s.entries as u64, b + s.buddy_entries as u64));
            WindowStat {
                window: w,
                start_event: start,
                end_event: end,
                entry_accesses: entries,
                buddy_entry_accesses: buddy,
                buddy_fraction: if entries == 0 { 0.0 } else { buddy as f64 / entries as f64 },
                compression_ratio: report.compression_ratio,
            }
        })
        .collect())
}
