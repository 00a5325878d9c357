//! Buddy placement: which sectors of an entry live in device memory and
//! where the rest sits in the buddy carve-out.
//!
//! Pages are 8KB (64 entries) counted from each allocation's base. Each
//! compressed page gets a contiguous buddy page of `64 * buddy_bytes(target)`
//! bytes; buddy pages are handed out in allocation order, so a page's buddy
//! location is just an offset from the global buddy base register.

use crate::codec::{BLOCK_BYTES, SECTORS_PER_BLOCK};
use crate::error::{Error, Result};
use crate::memory::snapshot::{AllocationRecord, Snapshot};
use crate::memory::target::TargetRatio;
use crate::memory::Targets;

pub const PAGE_BYTES: u64 = 8192;
pub const ENTRIES_PER_PAGE: usize = 64;
/// Buddy offsets are counted in 2KB granules, the common divisor of every buddy page size.
pub const BUDDY_GRANULE: u64 = 2048;
pub const OFFSET_BITS: u32 = 20;
pub const DEFAULT_BUDDY_BASE: u64 = 1 << 40;

/// Global buddy base-address register plus the size of the carve-out behind it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GbbrConfig {
    pub buddy_base: u64,
    pub carveout_bytes: u64,
}

impl GbbrConfig {
    /// Carve-out of three times the device capacity, enough for a 4x maximum ratio.
    pub fn for_device_capacity(buddy_base: u64, device_bytes: u64) -> Self {
        Self {
            buddy_base,
            carveout_bytes: 3 * device_bytes,
        }
    }

    /// Smallest configuration that holds every buddy page of `snapshot` under
    /// `targets`, and never less than 3x the compressed device footprint.
    pub fn sized_for(snapshot: &Snapshot, targets: &Targets) -> Result<Self> {
        let mut device = 0u64;
        let mut buddy = 0u64;
        for a in &snapshot.allocations {
            let t = target_of(targets, a.record.alloc_id)?;
            device += a.entries() as u64 * t.device_bytes() as u64;
            buddy += pages_of(&a.record) * buddy_page_bytes(t);
        }
        let cfg = Self::for_device_capacity(DEFAULT_BUDDY_BASE, device);
        Ok(Self {
            carveout_bytes: cfg.carveout_bytes.max(buddy),
            ..cfg
        })
    }
}

/// Per-page translation state, packed into 24 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranslationEntry {
    pub compressed: bool,
    pub target: TargetRatio,
    /// Offset from the buddy base, in [`BUDDY_GRANULE`] units.
    pub buddy_page_offset: u32,
}

impl TranslationEntry {
    pub fn encode(&self) -> Result<u32> {
        if self.buddy_page_offset >= 1 << OFFSET_BITS {
            return Err(Error::Config(format!(
                "buddy page offset {} exceeds {OFFSET_BITS} bits",
                self.buddy_page_offset
            )));
        }
        Ok(((self.compressed as u32) << 23) | (self.target.code() << OFFSET_BITS) | self.buddy_page_offset)
    }

    pub fn decode(bits: u32) -> Result<Self> {
        if bits >> 24 != 0 {
            return Err(Error::Validation(format!("translation entry {bits:#x} wider than 24 bits")));
        }
        let code = (bits >> OFFSET_BITS) & 0b111;
        let target = TargetRatio::from_code(code)
            .ok_or_else(|| Error::Validation(format!("bad target code {code}")))?;
        Ok(Self {
            compressed: bits >> 23 == 1,
            target,
            buddy_page_offset: bits & ((1 << OFFSET_BITS) - 1),
        })
    }
}

pub fn buddy_page_bytes(target: TargetRatio) -> u64 {
    ENTRIES_PER_PAGE as u64 * target.buddy_bytes() as u64
}

fn pages_of(r: &AllocationRecord) -> u64 {
    r.length_bytes.div_ceil(PAGE_BYTES)
}

pub(crate) fn target_of(targets: &Targets, alloc_id: u64) -> Result<TargetRatio> {
    targets
        .get(&alloc_id)
        .copied()
        .ok_or_else(|| Error::Config(format!("no target for allocation {alloc_id}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocLayout {
    pub record: AllocationRecord,
    pub target: TargetRatio,
    /// Ordinal of the allocation's first entry across the snapshot.
    pub first_entry: usize,
    /// Buddy offset of the allocation's first page, in granules.
    pub buddy_offset: u64,
}

impl AllocLayout {
    pub fn translation_entry(&self, page_in_alloc: u64) -> TranslationEntry {
        let per_page = buddy_page_bytes(self.target) / BUDDY_GRANULE;
        TranslationEntry {
            compressed: self.target.is_compressed(),
            target: self.target,
            buddy_page_offset: (self.buddy_offset + page_in_alloc * per_page) as u32,
        }
    }
}

/// Where one entry's sectors live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub alloc_index: usize,
    pub entry_in_alloc: usize,
    /// Ordinal across the snapshot; indexes the metadata store.
    pub entry_ordinal: usize,
    pub target: TargetRatio,
    /// Sector positions (0..4) held in device memory.
    pub device_sector_slots: Vec<u8>,
    /// Zero mode keeps a single 8-byte device slot instead of sectors.
    pub zero_slot: bool,
    /// Sector positions held in buddy memory.
    pub buddy_sector_slots: Vec<u8>,
    /// Address of the first buddy sector; `None` when nothing is in buddy memory.
    pub buddy_address: Option<u64>,
    pub metadata_address: u64,
}

/// Address translation for one snapshot under fixed per-allocation targets.
#[derive(Debug, Clone)]
pub struct BuddyLayout {
    pub gbbr: GbbrConfig,
    pub metadata_base: u64,
    allocs: Vec<AllocLayout>,
    by_va: Vec<usize>,
}

impl BuddyLayout {
    pub fn new(snapshot: &Snapshot, targets: &Targets, gbbr: GbbrConfig) -> Result<Self> {
        let mut allocs = Vec::with_capacity(snapshot.allocations.len());
        let mut first_entry = 0;
        let mut granules = 0u64;
        for a in &snapshot.allocations {
            let target = target_of(targets, a.record.alloc_id)?;
            allocs.push(AllocLayout {
                record: a.record,
                target,
                first_entry,
                buddy_offset: granules,
            });
            first_entry += a.entries();
            granules += pages_of(&a.record) * buddy_page_bytes(target) / BUDDY_GRANULE;
        }
        let needed = granules * BUDDY_GRANULE;
        if needed > gbbr.carveout_bytes {
            return Err(Error::Config(format!(
                "buddy pages need {needed} bytes but the carve-out holds {}",
                gbbr.carveout_bytes
            )));
        }
        // The last page's offset must still fit the translation entry.
        if let Some(last) = allocs.iter().rev().find(|l| l.target.is_compressed()) {
            let pages = pages_of(&last.record).max(1);
            last.translation_entry(pages - 1).encode()?;
        }
        let mut by_va: Vec<usize> = (0..allocs.len()).collect();
        by_va.sort_by_key(|&i| allocs[i].record.base_va);
        Ok(Self {
            gbbr,
            metadata_base: 0,
            allocs,
            by_va,
        })
    }

    pub fn allocs(&self) -> &[AllocLayout] {
        &self.allocs
    }

    pub fn entry_count(&self) -> usize {
        self.allocs.iter().map(|a| a.record.entries()).sum()
    }

    pub fn alloc_index_of(&self, va: u64) -> Option<usize> {
        let pos = self
            .by_va
            .partition_point(|&i| self.allocs[i].record.base_va <= va);
        let idx = *self.by_va.get(pos.checked_sub(1)?)?;
        self.allocs[idx].record.contains(va).then_some(idx)
    }

    pub fn metadata_address(&self, entry_ordinal: usize) -> u64 {
        self.metadata_base + (entry_ordinal / 2) as u64
    }

    pub fn translate(&self, va: u64) -> Result<Placement> {
        let alloc_index = self.alloc_index_of(va).ok_or(Error::Fault { va, event: None })?;
        Ok(self.place(alloc_index, ((va - self.allocs[alloc_index].record.base_va) / BLOCK_BYTES as u64) as usize))
    }

    /// Placement of entry `entry_in_alloc` of allocation `alloc_index`.
    pub fn place(&self, alloc_index: usize, entry_in_alloc: usize) -> Placement {
        let l = &self.allocs[alloc_index];
        let page = (entry_in_alloc / ENTRIES_PER_PAGE) as u64;
        let in_page = (entry_in_alloc % ENTRIES_PER_PAGE) as u64;
        let t = l.target;
        let entry_ordinal = l.first_entry + entry_in_alloc;
        let (device, zero_slot) = if t.is_zero_mode() {
            (vec![], true)
        } else {
            ((0..t.device_sectors() as u8).collect(), false)
        };
        let first_buddy = if t.is_zero_mode() { 0 } else { t.device_sectors() as u8 };
        let buddy: Vec<u8> = (first_buddy..SECTORS_PER_BLOCK as u8).collect();
        let buddy_address = (!buddy.is_empty()).then(|| {
            let te = l.translation_entry(page);
            self.gbbr.buddy_base
                + te.buddy_page_offset as u64 * BUDDY_GRANULE
                + in_page * t.buddy_bytes() as u64
        });
        Placement {
            alloc_index,
            entry_in_alloc,
            entry_ordinal,
            target: t,
            device_sector_slots: device,
            zero_slot,
            buddy_sector_slots: buddy,
            buddy_address,
            metadata_address: self.metadata_address(entry_ordinal),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::snapshot::Allocation;

    fn snapshot(lens: &[u64]) -> Snapshot {
        let mut base = 0x10_0000;
        let allocs = lens
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let a = Allocation::new(
                    AllocationRecord {
                        alloc_id: i as u64,
                        base_va: base,
                        length_bytes: len,
                    },
                    vec![0; len as usize],
                );
                base += len.next_multiple_of(PAGE_BYTES) + PAGE_BYTES;
                a
            })
            .collect();
        Snapshot::new(0, allocs).unwrap()
    }

    fn layout(s: &Snapshot, ts: &[TargetRatio]) -> BuddyLayout {
        let targets: Targets = ts.iter().enumerate().map(|(i, &t)| (i as u64, t)).collect();
        BuddyLayout::new(s, &targets, GbbrConfig::sized_for(s, &targets).unwrap()).unwrap()
    }

    #[test]
    fn r2_first_entry_splits_two_and_two() {
        let s = snapshot(&[PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R2]);
        let p = l.translate(0x10_0000).unwrap();
        assert_eq!(p.device_sector_slots, vec![0, 1]);
        assert_eq!(p.buddy_sector_slots, vec![2, 3]);
        assert_eq!(p.buddy_address, Some(l.gbbr.buddy_base));
    }

    #[test]
    fn r1_keeps_everything_on_device() {
        let s = snapshot(&[PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R1]);
        let p = l.translate(0x10_0000 + 300).unwrap();
        assert_eq!(p.entry_in_alloc, 2);
        assert_eq!(p.device_sector_slots, vec![0, 1, 2, 3]);
        assert!(p.buddy_sector_slots.is_empty());
        assert_eq!(p.buddy_address, None);
    }

    #[test]
    fn r4_entry_five_offset() {
        let s = snapshot(&[PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R4]);
        let p = l.translate(0x10_0000 + 5 * 128).unwrap();
        assert_eq!(p.device_sector_slots, vec![0]);
        assert_eq!(p.buddy_sector_slots, vec![1, 2, 3]);
        assert_eq!(p.buddy_address, Some(l.gbbr.buddy_base + 5 * 96));
    }

    #[test]
    fn zero_mode_uses_slot_and_full_buddy_entry() {
        let s = snapshot(&[PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R16zero]);
        let p = l.translate(0x10_0000 + 128).unwrap();
        assert!(p.zero_slot);
        assert!(p.device_sector_slots.is_empty());
        assert_eq!(p.buddy_sector_slots, vec![0, 1, 2, 3]);
        assert_eq!(p.buddy_address, Some(l.gbbr.buddy_base + 128));
    }

    #[test]
    fn outside_allocations_faults() {
        let s = snapshot(&[PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R2]);
        assert!(matches!(l.translate(0), Err(Error::Fault { va: 0, .. })));
        assert!(l.translate(0x10_0000 + PAGE_BYTES).is_err());
    }

    #[test]
    fn buddy_pages_follow_allocation_order() {
        let s = snapshot(&[2 * PAGE_BYTES, PAGE_BYTES]);
        let l = layout(&s, &[TargetRatio::R4, TargetRatio::R2]);
        // two R4 pages of 6KB each precede the R2 allocation
        assert_eq!(l.allocs()[1].buddy_offset * BUDDY_GRANULE, 2 * 6144);
        let second = s.allocations[1].record.base_va;
        assert_eq!(l.translate(second).unwrap().buddy_address, Some(l.gbbr.buddy_base + 12288));
    }

    #[test]
    fn translation_entry_packs_into_24_bits() {
        for t in TargetRatio::ALL {
            let te = TranslationEntry {
                compressed: t.is_compressed(),
                target: t,
                buddy_page_offset: (1 << OFFSET_BITS) - 1,
            };
            let bits = te.encode().unwrap();
            assert!(bits < 1 << 24);
            assert_eq!(TranslationEntry::decode(bits).unwrap(), te);
        }
        let too_far = TranslationEntry {
            compressed: true,
            target: TargetRatio::R2,
            buddy_page_offset: 1 << OFFSET_BITS,
        };
        assert!(too_far.encode().is_err());
    }

    #[test]
    fn small_carveout_is_rejected() {
        let s = snapshot(&[PAGE_BYTES]);
        let targets: Targets = [(0, TargetRatio::R4)].into();
        let gbbr = GbbrConfig {
            buddy_base: 0,
            carveout_bytes: 6143,
        };
        assert!(matches!(BuddyLayout::new(&s, &targets, gbbr), Err(Error::Config(_))));
    }

    #[test]
    fn carveout_is_three_times_device_at_r4() {
        let s = snapshot(&[4 * PAGE_BYTES]);
        let targets: Targets = [(0, TargetRatio::R4)].into();
        let g = GbbrConfig::sized_for(&s, &targets).unwrap();
        assert_eq!(g.carveout_bytes, 3 * 4 * PAGE_BYTES / 4);
    }

    #[test]
    fn buddy_ranges_are_disjoint_for_every_target_mix() {
        // exhaustive over target assignments for three small allocations,
        // including a partial last page
        let s = snapshot(&[PAGE_BYTES + 3 * 128, 2 * 128, PAGE_BYTES]);
        for a in TargetRatio::ALL {
            for b in TargetRatio::ALL {
                for c in TargetRatio::ALL {
                    let l = layout(&s, &[a, b, c]);
                    let mut ranges = Vec::new();
                    for (ai, alloc) in s.allocations.iter().enumerate() {
                        for e in 0..alloc.entries() {
                            let p = l.place(ai, e);
                            if let Some(addr) = p.buddy_address {
                                let len = p.target.buddy_bytes() as u64;
                                assert!(addr >= l.gbbr.buddy_base);
                                assert!(addr + len <= l.gbbr.buddy_base + l.gbbr.carveout_bytes);
                                ranges.push((addr, addr + len));
                            }
                        }
                    }
                    ranges.sort();
                    for w in ranges.windows(2) {
                        assert!(w[0].1 <= w[1].0, "{a} {b} {c}: {:?} overlaps {:?}", w[0], w[1]);
                    }
                }
            }
        }
    }
}
