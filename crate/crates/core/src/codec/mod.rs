//! 128-byte memory-entry codec and size quantization.

pub mod bits;
pub mod bpc;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK_BYTES: usize = 128;
pub const WORDS_PER_BLOCK: usize = 32;
pub const SECTOR_BYTES: usize = 32;
pub const SECTORS_PER_BLOCK: usize = 4;

/// One 128-byte memory entry, viewed as 32 little-endian 32-bit words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block128 {
    pub words: [u32; WORDS_PER_BLOCK],
}

impl Block128 {
    pub fn zeroed() -> Self {
        Self {
            words: [0; WORDS_PER_BLOCK],
        }
    }

    pub fn from_fn(f: impl FnMut(usize) -> u32) -> Self {
        Self {
            words: std::array::from_fn(f),
        }
    }

    /// Panics unless `bytes` is exactly 128 bytes long.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), BLOCK_BYTES, "a block is exactly 128 bytes");
        Self::from_fn(|i| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap()))
    }

    pub fn to_bytes(&self) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        for (chunk, w) in out.chunks_exact_mut(4).zip(self.words.iter()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

/// Encoded form of a block. `bytes` holds the bits MSB-first, zero padded to
/// a whole byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBlock {
    pub bytes: Vec<u8>,
    pub bit_length: usize,
}

impl CompressedBlock {
    pub fn byte_len(&self) -> usize {
        self.bit_length.div_ceil(8)
    }

    /// Bytes charged for storage: raw fallback caps this at 128.
    pub fn stored_bytes(&self) -> usize {
        self.byte_len().min(BLOCK_BYTES)
    }
}

pub fn compress_block(block: &Block128) -> CompressedBlock {
    bpc::compress(block)
}

pub fn decompress_block(cb: &CompressedBlock) -> Result<Block128> {
    bpc::decompress(cb)
}

/// Quantized compressed size of one entry, as recorded in its 4-bit metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    /// Compresses to at most 8 bytes; occupies one sector outside zero mode.
    Fits8B,
    Sectors1,
    Sectors2,
    Sectors3,
    Sectors4,
    /// Incompressible; stored verbatim in 4 sectors.
    Raw,
}

impl SizeClass {
    pub const ALL: [SizeClass; 6] = [
        SizeClass::Fits8B,
        SizeClass::Sectors1,
        SizeClass::Sectors2,
        SizeClass::Sectors3,
        SizeClass::Sectors4,
        SizeClass::Raw,
    ];

    pub fn from_compressed_bytes(bytes: usize) -> Self {
        if bytes >= BLOCK_BYTES {
            SizeClass::Raw
        } else if bytes <= 8 {
            SizeClass::Fits8B
        } else {
            match bytes.div_ceil(SECTOR_BYTES).clamp(1, 4) {
                1 => SizeClass::Sectors1,
                2 => SizeClass::Sectors2,
                3 => SizeClass::Sectors3,
                _ => SizeClass::Sectors4,
            }
        }
    }

    /// Sectors occupied in normal (non zero-mode) layout.
    pub fn sectors(self) -> usize {
        match self {
            SizeClass::Fits8B | SizeClass::Sectors1 => 1,
            SizeClass::Sectors2 => 2,
            SizeClass::Sectors3 => 3,
            SizeClass::Sectors4 | SizeClass::Raw => 4,
        }
    }

    pub fn fits_8b(self) -> bool {
        self == SizeClass::Fits8B
    }

    /// 4-bit metadata code.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Fits8B => "fits8b",
            SizeClass::Sectors1 => "s1",
            SizeClass::Sectors2 => "s2",
            SizeClass::Sectors3 => "s3",
            SizeClass::Sectors4 => "s4",
            SizeClass::Raw => "raw",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fits8b" | "8b" => SizeClass::Fits8B,
            "s1" | "1" | "sectors1" => SizeClass::Sectors1,
            "s2" | "2" | "sectors2" => SizeClass::Sectors2,
            "s3" | "3" | "sectors3" => SizeClass::Sectors3,
            "s4" | "4" | "sectors4" => SizeClass::Sectors4,
            "raw" => SizeClass::Raw,
            other => return Err(Error::Validation(format!("unknown size class {other:?}"))),
        })
    }
}

pub fn size_class(block: &Block128) -> SizeClass {
    SizeClass::from_compressed_bytes(compress_block(block).byte_len())
}

/// Optimistic capacity bucket used for whole-run compressibility statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SizeBucket(u8);

impl SizeBucket {
    pub const BYTES: [usize; 8] = [0, 8, 16, 32, 64, 80, 96, 128];

    /// Smallest non-zero bucket holding `bytes`; 0 is reserved for all-zero entries.
    pub fn for_bytes(bytes: usize) -> Self {
        let idx = Self::BYTES[1..]
            .iter()
            .position(|&b| b >= bytes)
            .map_or(Self::BYTES.len() - 1, |p| p + 1);
        SizeBucket(idx as u8)
    }

    pub fn zero() -> Self {
        SizeBucket(0)
    }

    pub fn bytes(self) -> usize {
        Self::BYTES[self.0 as usize]
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub fn size_bucket(block: &Block128) -> SizeBucket {
    if block.is_zero() {
        return SizeBucket::zero();
    }
    SizeBucket::for_bytes(compress_block(block).byte_len())
}

/// Class and bucket from a single encode.
pub fn classify(block: &Block128) -> (SizeClass, SizeBucket) {
    let bytes = compress_block(block).byte_len();
    let bucket = if block.is_zero() {
        SizeBucket::zero()
    } else {
        SizeBucket::for_bytes(bytes)
    };
    (SizeClass::from_compressed_bytes(bytes), bucket)
}
