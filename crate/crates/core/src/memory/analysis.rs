//! Static, per-snapshot accounting: access splits, capacity ratio, buddy
//! fraction and the spatial heatmap.

use rayon::prelude::*;

use crate::codec::{size_class, SizeClass, BLOCK_BYTES, SECTOR_BYTES};
use crate::error::Result;
use crate::memory::layout::{target_of, ENTRIES_PER_PAGE};
use crate::memory::snapshot::Snapshot;
use crate::memory::target::TargetRatio;
use crate::memory::Targets;

/// Sectors one access to an entry reads from each region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccessSplit {
    pub device_sectors: usize,
    pub buddy_sectors: usize,
    /// Zero-mode entry served from its 8-byte device slot.
    pub zero_slot: bool,
}

impl AccessSplit {
    pub fn touches_buddy(&self) -> bool {
        self.buddy_sectors > 0
    }

    /// Device traffic; the 8-byte slot still costs one sector burst.
    pub fn device_bytes(&self) -> u64 {
        ((self.device_sectors + self.zero_slot as usize) * SECTOR_BYTES) as u64
    }

    pub fn buddy_bytes(&self) -> u64 {
        (self.buddy_sectors * SECTOR_BYTES) as u64
    }
}

pub fn entry_access_split(class: SizeClass, target: TargetRatio) -> AccessSplit {
    let n = class.sectors();
    if target.is_zero_mode() {
        return if class.fits_8b() {
            AccessSplit {
                device_sectors: 0,
                buddy_sectors: 0,
                zero_slot: true,
            }
        } else {
            AccessSplit {
                device_sectors: 0,
                buddy_sectors: n,
                zero_slot: false,
            }
        };
    }
    let reserved = target.device_sectors();
    AccessSplit {
        device_sectors: n.min(reserved),
        buddy_sectors: n.saturating_sub(reserved),
        zero_slot: false,
    }
}

/// Size class of every entry, per allocation in snapshot order.
pub fn snapshot_classes(snapshot: &Snapshot) -> Vec<Vec<SizeClass>> {
    snapshot
        .allocations
        .par_iter()
        .map(|a| {
            a.data
                .par_chunks_exact(BLOCK_BYTES)
                .map(|c| size_class(&crate::codec::Block128::from_bytes(c)))
                .collect()
        })
        .collect()
}

/// Logical bytes over device bytes reserved by the targets.
pub fn effective_compression_ratio(snapshot: &Snapshot, targets: &Targets) -> Result<f64> {
    let mut logical = 0u64;
    let mut device = 0u64;
    for a in &snapshot.allocations {
        let t = target_of(targets, a.record.alloc_id)?;
        let n = a.entries() as u64;
        logical += n * BLOCK_BYTES as u64;
        device += n * t.device_bytes() as u64;
    }
    if device == 0 {
        return Ok(1.0);
    }
    Ok(logical as f64 / device as f64)
}

/// Fraction of entries whose access would touch buddy memory.
pub fn static_buddy_fraction(snapshot: &Snapshot, targets: &Targets) -> Result<f64> {
    static_buddy_fraction_with(snapshot, &snapshot_classes(snapshot), targets)
}

/// As [`static_buddy_fraction`], with size classes already computed.
pub fn static_buddy_fraction_with(
    snapshot: &Snapshot,
    classes: &[Vec<SizeClass>],
    targets: &Targets,
) -> Result<f64> {
    let mut total = 0usize;
    let mut buddy = 0usize;
    for (a, cls) in snapshot.allocations.iter().zip(classes) {
        let t = target_of(targets, a.record.alloc_id)?;
        total += cls.len();
        buddy += cls
            .iter()
            .filter(|&&c| entry_access_split(c, t).touches_buddy())
            .count();
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(buddy as f64 / total as f64)
}

/// Rows of 64 sector counts, one row per 8KB page, pages in ascending
/// virtual-address order. Columns past the end of a partial page are 0.
pub fn heatmap_matrix(snapshot: &Snapshot) -> Vec<[u8; ENTRIES_PER_PAGE]> {
    heatmap_from_classes(snapshot, &snapshot_classes(snapshot))
}

pub fn heatmap_from_classes(snapshot: &Snapshot, classes: &[Vec<SizeClass>]) -> Vec<[u8; ENTRIES_PER_PAGE]> {
    let mut order: Vec<usize> = (0..snapshot.allocations.len()).collect();
    order.sort_by_key(|&i| snapshot.allocations[i].record.base_va);
    let mut rows = Vec::new();
    for i in order {
        for page in classes[i].chunks(ENTRIES_PER_PAGE) {
            let mut row = [0u8; ENTRIES_PER_PAGE];
            for (cell, c) in row.iter_mut().zip(page) {
                *cell = c.sectors() as u8;
            }
            rows.push(row);
        }
    }
    rows
}
