//! Snapshot data model and its binary file format.
//!
//! Layout (little-endian): magic `BDYC`, `u32` version (1), `u32` allocation
//! count, one `{u64 alloc_id, u64 base_va, u64 length_bytes}` record per
//! allocation, then the allocation contents concatenated in record order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::codec::{Block128, BLOCK_BYTES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BDYC";
pub const VERSION: u32 = 1;
pub const SNAPSHOT_EXT: &str = "bdyc";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AllocationRecord {
    pub alloc_id: u64,
    pub base_va: u64,
    pub length_bytes: u64,
}

impl AllocationRecord {
    pub fn end_va(&self) -> u64 {
        self.base_va + self.length_bytes
    }

    pub fn entries(&self) -> usize {
        (self.length_bytes / BLOCK_BYTES as u64) as usize
    }

    pub fn contains(&self, va: u64) -> bool {
        va >= self.base_va && va < self.end_va()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub record: AllocationRecord,
    pub data: Vec<u8>,
}

impl Allocation {
    pub fn new(record: AllocationRecord, data: Vec<u8>) -> Self {
        Self { record, data }
    }

    pub fn entries(&self) -> usize {
        self.record.entries()
    }

    pub fn block(&self, entry: usize) -> Block128 {
        Block128::from_bytes(&self.data[entry * BLOCK_BYTES..(entry + 1) * BLOCK_BYTES])
    }

    pub fn blocks(&self) -> impl Iterator<Item = Block128> + '_ {
        self.data.chunks_exact(BLOCK_BYTES).map(Block128::from_bytes)
    }
}

/// A point-in-time dump of allocated memory. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub index: usize,
    pub allocations: Vec<Allocation>,
}

impl Snapshot {
    /// Validates alignment, data sizes, id uniqueness and non-overlap.
    pub fn new(index: usize, allocations: Vec<Allocation>) -> Result<Self> {
        let snap = Self { index, allocations };
        snap.validate()?;
        Ok(snap)
    }

    pub fn validate(&self) -> Result<()> {
        let align = BLOCK_BYTES as u64;
        for a in &self.allocations {
            let r = &a.record;
            if r.base_va % align != 0 || r.length_bytes % align != 0 {
                return Err(Error::Validation(format!(
                    "allocation {} at {:#x}+{} is not 128-byte aligned",
                    r.alloc_id, r.base_va, r.length_bytes
                )));
            }
            if r.base_va.checked_add(r.length_bytes).is_none() {
                return Err(Error::Validation(format!(
                    "allocation {} wraps the address space",
                    r.alloc_id
                )));
            }
            if a.data.len() as u64 != r.length_bytes {
                return Err(Error::Validation(format!(
                    "allocation {} has {} data bytes, expected {}",
                    r.alloc_id,
                    a.data.len(),
                    r.length_bytes
                )));
            }
        }
        let mut sorted: Vec<&AllocationRecord> = self.allocations.iter().map(|a| &a.record).collect();
        sorted.sort_by_key(|r| r.alloc_id);
        if let Some(w) = sorted.windows(2).find(|w| w[0].alloc_id == w[1].alloc_id) {
            return Err(Error::Validation(format!("duplicate alloc_id {}", w[0].alloc_id)));
        }
        sorted.sort_by_key(|r| (r.base_va, r.length_bytes));
        if let Some(w) = sorted
            .windows(2)
            .find(|w| w[0].length_bytes > 0 && w[0].end_va() > w[1].base_va)
        {
            return Err(Error::Validation(format!(
                "allocations {} and {} overlap",
                w[0].alloc_id, w[1].alloc_id
            )));
        }
        Ok(())
    }

    pub fn entry_count(&self) -> usize {
        self.allocations.iter().map(Allocation::entries).sum()
    }

    pub fn allocation(&self, alloc_id: u64) -> Option<&Allocation> {
        self.allocations.iter().find(|a| a.record.alloc_id == alloc_id)
    }

    pub fn find_va(&self, va: u64) -> Option<(usize, &Allocation)> {
        self.allocations
            .iter()
            .enumerate()
            .find(|(_, a)| a.record.contains(va))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data_len: usize = self.allocations.iter().map(|a| a.data.len()).sum();
        let mut out = Vec::with_capacity(12 + 24 * self.allocations.len() + data_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.allocations.len() as u32).to_le_bytes());
        for a in &self.allocations {
            out.extend_from_slice(&a.record.alloc_id.to_le_bytes());
            out.extend_from_slice(&a.record.base_va.to_le_bytes());
            out.extend_from_slice(&a.record.length_bytes.to_le_bytes());
        }
        for a in &self.allocations {
            out.extend_from_slice(&a.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], index: usize) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {magic:02x?}"),
            });
        }
        let version = cur.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = cur.u32("allocation count")? as usize;
        let mut records = Vec::with_capacity(count.min(bytes.len() / 24));
        for _ in 0..count {
            records.push(AllocationRecord {
                alloc_id: cur.u64("alloc_id")?,
                base_va: cur.u64("base_va")?,
                length_bytes: cur.u64("length_bytes")?,
            });
        }
        let mut allocations = Vec::with_capacity(records.len());
        for r in records {
            let len = usize::try_from(r.length_bytes).map_err(|_| Error::Format {
                offset: cur.pos as u64,
                reason: format!("allocation {} length does not fit in memory", r.alloc_id),
            })?;
            let data = cur.take(len, "allocation data")?.to_vec();
            allocations.push(Allocation::new(r, data));
        }
        if cur.pos != bytes.len() {
            return Err(Error::Format {
                offset: cur.pos as u64,
                reason: format!("{} trailing bytes", bytes.len() - cur.pos),
            });
        }
        Snapshot::new(index, allocations)
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Series member path: `<stem>_<index>.bdyc`.
pub fn series_path(stem: &Path, index: usize) -> std::path::PathBuf {
    let name = stem
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    stem.with_file_name(format!("{name}_{index}.{SNAPSHOT_EXT}"))
}

/// Index encoded in a `<stem>_<index>.bdyc` file name, if any.
pub fn index_from_path(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let (_, idx) = stem.rsplit_once('_')?;
    idx.parse().ok()
}

/// Loads a snapshot; its index comes from the file name suffix, defaulting to 0.
pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    Snapshot::from_bytes(&bytes, index_from_path(path).unwrap_or(0))
}

pub fn write_snapshot(snapshot: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    snapshot.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads a series in argument order, requiring strictly increasing indices.
/// Files without an index suffix take their position in the list.
pub fn load_series<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Snapshot>> {
    if paths.is_empty() {
        return Err(Error::Config("snapshot series is empty".into()));
    }
    let mut out: Vec<Snapshot> = Vec::with_capacity(paths.len());
    for (pos, p) in paths.iter().enumerate() {
        let bytes = fs::read(p.as_ref())?;
        let index = index_from_path(p.as_ref()).unwrap_or(pos);
        let snap = Snapshot::from_bytes(&bytes, index)?;
        if let Some(prev) = out.last() {
            if snap.index <= prev.index {
                return Err(Error::Validation(format!(
                    "snapshot indices not increasing: {} after {}",
                    snap.index, prev.index
                )));
            }
        }
        out.push(snap);
    }
    Ok(out)
}
