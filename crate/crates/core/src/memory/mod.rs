//! Snapshots, buddy placement, metadata and static accounting.

pub mod analysis;
pub mod layout;
pub mod metadata;
pub mod snapshot;
pub mod target;

use std::collections::BTreeMap;

pub use analysis::{
    effective_compression_ratio, entry_access_split, heatmap_matrix, snapshot_classes,
    static_buddy_fraction, AccessSplit,
};
pub use layout::{BuddyLayout, GbbrConfig, Placement, TranslationEntry, ENTRIES_PER_PAGE, PAGE_BYTES};
pub use metadata::MetadataStore;
pub use snapshot::{load_series, load_snapshot, write_snapshot, Allocation, AllocationRecord, Snapshot};
pub use target::TargetRatio;

/// Target ratio per allocation id.
pub type Targets = BTreeMap<u64, TargetRatio>;
