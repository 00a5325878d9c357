//! Synthetic snapshot series and traces.
//!
//! Entry contents come from named [`BlockPattern`]s held in a
//! [`PatternRegistry`]; a [`Mix`] says what fraction of entries each pattern
//! fills. Every generated entry is recorded in a manifest with its pattern and
//! size class so tests can check downstream statistics against it.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{size_class, Block128, SizeClass, BLOCK_BYTES};
use crate::error::{Error, Result};
use crate::memory::{Allocation, AllocationRecord, Snapshot, PAGE_BYTES};
use crate::sim::{TraceEvent, WriteData};

pub const DEFAULT_BASE_VA: u64 = 0x7f00_0000_0000;

pub trait BlockPattern: Send + Sync {
    fn name(&self) -> &'static str;
    fn generate(&self, rng: &mut dyn RngCore) -> Block128;
}

pub struct ZeroPattern;

impl BlockPattern for ZeroPattern {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn generate(&self, _rng: &mut dyn RngCore) -> Block128 {
        Block128::zeroed()
    }
}

/// Arithmetic sequence with a random base and a stride in 1..=255.
pub struct RampPattern;

impl BlockPattern for RampPattern {
    fn name(&self) -> &'static str {
        "ramp"
    }

    fn generate(&self, rng: &mut dyn RngCore) -> Block128 {
        let base = rng.gen_range(0..u32::MAX - 32 * 255);
        let stride = rng.gen_range(1..=255u32);
        Block128::from_fn(|i| base + stride * i as u32)
    }
}

/// Ramp with 4 to 20 random low-order bits per word; lands in 1 to 4 sectors.
pub struct NoisyPattern;

impl BlockPattern for NoisyPattern {
    fn name(&self) -> &'static str {
        "noisy"
    }

    fn generate(&self, rng: &mut dyn RngCore) -> Block128 {
        let base = rng.gen_range(0..1u32 << 30);
        let stride = rng.gen_range(1..=255u32);
        let bits = rng.gen_range(4..=20u32);
        let mask = (1u32 << bits) - 1;
        Block128::from_fn(|i| base + stride * i as u32 + (rng.next_u32() & mask))
    }
}

pub struct RandomPattern;

impl BlockPattern for RandomPattern {
    fn name(&self) -> &'static str {
        "random"
    }

    fn generate(&self, rng: &mut dyn RngCore) -> Block128 {
        Block128::from_fn(|_| rng.next_u32())
    }
}

#[derive(Default)]
pub struct PatternRegistry {
    patterns: Vec<Box<dyn BlockPattern>>,
}

impl PatternRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `zero`, `ramp`, `noisy` and `random`.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        r.register(Box::new(ZeroPattern));
        r.register(Box::new(RampPattern));
        r.register(Box::new(NoisyPattern));
        r.register(Box::new(RandomPattern));
        r
    }

    /// Replaces any pattern already registered under the same name.
    pub fn register(&mut self, pattern: Box<dyn BlockPattern>) {
        match self.patterns.iter().position(|p| p.name() == pattern.name()) {
            Some(i) => self.patterns[i] = pattern,
            None => self.patterns.push(pattern),
        }
    }

    pub fn get(&self, name: &str) -> Option<&dyn BlockPattern> {
        self.patterns.iter().find(|p| p.name() == name).map(|p| p.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.patterns.iter().map(|p| p.name()).collect()
    }
}

impl fmt::Debug for PatternRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

/// Fraction of entries per pattern name.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix(pub Vec<(String, f64)>);

impl Mix {
    /// Accepts `z:r:x` (zero, ramp, random) or `name=frac,name=frac,...`.
    pub fn parse(s: &str, registry: &PatternRegistry) -> Result<Self> {
        let bad = |msg: String| Error::Validation(format!("bad mix {s:?}: {msg}"));
        let parts: Vec<(String, f64)> = if s.contains('=') {
            s.split(',')
                .map(|kv| {
                    let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("{kv:?} is not name=frac")))?;
                    let v: f64 = v.trim().parse().map_err(|_| bad(format!("{v:?} is not a number")))?;
                    Ok((k.trim().to_string(), v))
                })
                .collect::<Result<_>>()?
        } else {
            let vals: Vec<f64> = s
                .split(':')
                .map(|v| v.trim().parse().map_err(|_| bad(format!("{v:?} is not a number"))))
                .collect::<Result<_>>()?;
            if vals.len() != 3 {
                return Err(bad("positional form is zero:ramp:random".into()));
            }
            ["zero", "ramp", "random"]
                .iter()
                .zip(vals)
                .map(|(k, v)| (k.to_string(), v))
                .collect()
        };
        let mix = Mix(parts);
        mix.validate(registry)?;
        Ok(mix)
    }

    pub fn validate(&self, registry: &PatternRegistry) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, frac) in &self.0 {
            if registry.get(name).is_none() {
                return Err(Error::Validation(format!(
                    "unknown pattern {name:?}; known: {:?}",
                    registry.names()
                )));
            }
            if !seen.insert(name) {
                return Err(Error::Validation(format!("pattern {name:?} listed twice")));
            }
            if !(0.0..=1.0).contains(frac) {
                return Err(Error::Validation(format!("fraction {frac} for {name:?} outside [0, 1]")));
            }
        }
        let sum: f64 = self.0.iter().map(|(_, f)| f).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Entry counts per pattern summing to `n` (largest remainder rounding).
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.0.iter().map(|(_, f)| f * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = n - counts.iter().sum::<usize>().min(n);
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        for i in order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub entries: usize,
    pub allocations: usize,
    pub snapshots: usize,
    /// Fraction of entries whose class changes between consecutive snapshots.
    pub drift: f64,
    pub seed: u64,
    pub mix: Mix,
    /// Interleave patterns across the address space instead of laying them out in runs.
    pub shuffle: bool,
    pub base_va: u64,
}

impl GenConfig {
    pub fn new(entries: usize, mix: Mix) -> Self {
        Self {
            entries,
            allocations: 4,
            snapshots: 1,
            drift: 0.0,
            seed: 0,
            mix,
            shuffle: false,
            base_va: DEFAULT_BASE_VA,
        }
    }

    pub fn validate(&self, registry: &PatternRegistry) -> Result<()> {
        self.mix.validate(registry)?;
        if self.snapshots == 0 || self.allocations == 0 {
            return Err(Error::Validation("need at least one snapshot and one allocation".into()));
        }
        if self.entries < self.allocations {
            return Err(Error::Validation(format!(
                "{} entries cannot fill {} allocations",
                self.entries, self.allocations
            )));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::Validation(format!("drift {} outside [0, 1]", self.drift)));
        }
        Ok(())
    }

    pub fn drift_count(&self) -> usize {
        (self.drift * self.entries as f64).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub snapshot: usize,
    pub alloc_id: u64,
    pub entry: usize,
    pub pattern: &'static str,
    pub class: SizeClass,
}

#[derive(Debug, Clone)]
pub struct GeneratedSeries {
    pub snapshots: Vec<Snapshot>,
    pub manifest: Vec<ManifestRow>,
}

impl GeneratedSeries {
    pub fn manifest_csv(&self) -> String {
        let mut out = String::from("snapshot,alloc_id,entry,pattern,size_class\n");
        for r in &self.manifest {
            out.push_str(&format!("{},{},{},{},{}\n", r.snapshot, r.alloc_id, r.entry, r.pattern, r.class));
        }
        out
    }
}

struct Cell {
    pattern: &'static str,
    block: Block128,
    class: SizeClass,
}

pub fn generate_series(cfg: &GenConfig, registry: &PatternRegistry) -> Result<GeneratedSeries> {
    cfg.validate(registry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patterns: Vec<&dyn BlockPattern> = cfg.mix.0.iter().map(|(n, _)| registry.get(n).unwrap()).collect();
    let n = cfg.entries;

    let mut kinds: Vec<usize> = cfg
        .mix
        .counts(n)
        .into_iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat_n(k, c))
        .collect();
    if cfg.shuffle {
        rand::seq::SliceRandom::shuffle(kinds.as_mut_slice(), &mut rng);
    }
    let mut cells: Vec<Cell> = kinds
        .into_iter()
        .map(|k| {
            let block = patterns[k].generate(&mut rng);
            Cell {
                pattern: patterns[k].name(),
                class: size_class(&block),
                block,
            }
        })
        .collect();

    // contiguous allocations, each starting on its own 8KB page with a gap page
    let per = n / cfg.allocations;
    let extra = n % cfg.allocations;
    let mut records = Vec::with_capacity(cfg.allocations);
    let mut va = cfg.base_va;
    for a in 0..cfg.allocations {
        let entries = per + usize::from(a < extra);
        let len = (entries * BLOCK_BYTES) as u64;
        records.push((
            AllocationRecord {
                alloc_id: a as u64 + 1,
                base_va: va,
                length_bytes: len,
            },
            entries,
        ));
        va += len.next_multiple_of(PAGE_BYTES) + PAGE_BYTES;
    }

    let mut snapshots = Vec::with_capacity(cfg.snapshots);
    let mut manifest = Vec::with_capacity(n * cfg.snapshots);
    for s in 0..cfg.snapshots {
        if s > 0 {
            for idx in sample(&mut rng, n, cfg.drift_count().min(n)).into_vec() {
                drift_cell(&mut cells[idx], &patterns, registry, &mut rng);
            }
        }
        let mut allocations = Vec::with_capacity(records.len());
        let mut next = 0;
        for &(rec, entries) in &records {
            let mut data = Vec::with_capacity(entries * BLOCK_BYTES);
            for e in 0..entries {
                let cell = &cells[next + e];
                data.extend_from_slice(&cell.block.to_bytes());
                manifest.push(ManifestRow {
                    snapshot: s,
                    alloc_id: rec.alloc_id,
                    entry: e,
                    pattern: cell.pattern,
                    class: cell.class,
                });
            }
            next += entries;
            allocations.push(Allocation::new(rec, data));
        }
        snapshots.push(Snapshot::new(s, allocations)?);
    }
    Ok(GeneratedSeries { snapshots, manifest })
}

/// Regenerates a cell so that its size class differs from before: first
/// from another pattern of the mix, then from `random` (or `zero` when the
/// entry was already raw).
fn drift_cell(cell: &mut Cell, patterns: &[&dyn BlockPattern], registry: &PatternRegistry, rng: &mut ChaCha8Rng) {
    let old = cell.class;
    let others: Vec<&dyn BlockPattern> = patterns.iter().copied().filter(|p| p.name() != cell.pattern).collect();
    if !others.is_empty() {
        let p = others[rng.gen_range(0..others.len())];
        let block = p.generate(rng);
        let class = size_class(&block);
        if class != old {
            *cell = Cell { pattern: p.name(), block, class };
            return;
        }
    }
    let fallback: &dyn BlockPattern = if old == SizeClass::Raw {
        registry.get("zero").unwrap_or(&ZeroPattern)
    } else {
        registry.get("random").unwrap_or(&RandomPattern)
    };
    loop {
        let block = fallback.generate(rng);
        let class = size_class(&block);
        if class != old {
            *cell = Cell {
                pattern: fallback.name(),
                block,
                class,
            };
            return;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TraceKind {
    /// Read every entry once in address order.
    Sequential,
    /// Uniform random entry reads and payload-free writes.
    Random { events: usize, write_fraction: f64 },
}

pub fn generate_trace(snapshot: &Snapshot, kind: TraceKind, seed: u64) -> Vec<TraceEvent> {
    let mut allocs: Vec<&Allocation> = snapshot.allocations.iter().collect();
    allocs.sort_by_key(|a| a.record.base_va);
    let entry_vas: Vec<u64> = allocs
        .iter()
        .flat_map(|a| (0..a.entries()).map(move |e| a.record.base_va + (e * BLOCK_BYTES) as u64))
        .collect();
    match kind {
        TraceKind::Sequential => entry_vas
            .into_iter()
            .map(|va| TraceEvent::read(va, BLOCK_BYTES as u32))
            .collect(),
        TraceKind::Random { events, write_fraction } => {
            if entry_vas.is_empty() {
                return Vec::new();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6163_6500);
            (0..events)
                .map(|_| {
                    let va = entry_vas[rng.gen_range(0..entry_vas.len())];
                    if rng.gen_bool(write_fraction.clamp(0.0, 1.0)) {
                        TraceEvent::write(va, BLOCK_BYTES as u32, WriteData::Perturb)
                    } else {
                        TraceEvent::read(va, BLOCK_BYTES as u32)
                    }
                })
                .collect()
        }
    }
}
