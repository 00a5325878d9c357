use crate::codec::{SizeClass, BLOCK_BYTES};

/// Bytes in one metadata line; covers 64 entries.
pub const METADATA_LINE_BYTES: usize = 32;
pub const ENTRIES_PER_LINE: usize = METADATA_LINE_BYTES * 2;

/// Per-entry 4-bit size-class codes, two per byte, in entry order.
/// Even entries use the low nibble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataStore {
    nibbles: Vec<u8>,
    entries: usize,
}

impl MetadataStore {
    pub fn new(entries: usize) -> Self {
        Self {
            nibbles: vec![0; entries.div_ceil(2)],
            entries,
        }
    }

    pub fn from_classes(classes: impl IntoIterator<Item = SizeClass>) -> Self {
        let classes: Vec<_> = classes.into_iter().collect();
        let mut store = Self::new(classes.len());
        for (i, c) in classes.into_iter().enumerate() {
            store.set(i, c);
        }
        store
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    pub fn get(&self, entry: usize) -> SizeClass {
        let byte = self.nibbles[entry / 2];
        let code = if entry.is_multiple_of(2) { byte & 0x0f } else { byte >> 4 };
        SizeClass::from_code(code).expect("store only holds valid codes")
    }

    pub fn set(&mut self, entry: usize, class: SizeClass) {
        assert!(entry < self.entries, "entry {entry} out of range");
        let byte = &mut self.nibbles[entry / 2];
        let code = class.code();
        *byte = if entry.is_multiple_of(2) {
            (*byte & 0xf0) | code
        } else {
            (*byte & 0x0f) | (code << 4)
        };
    }

    pub fn metadata_bytes(&self) -> usize {
        self.nibbles.len()
    }

    /// Metadata bytes over data bytes.
    pub fn capacity_overhead(&self) -> f64 {
        if self.entries == 0 {
            return 0.0;
        }
        self.metadata_bytes() as f64 / (self.entries * BLOCK_BYTES) as f64
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.nibbles
    }
}
