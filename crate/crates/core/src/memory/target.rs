use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codec::{BLOCK_BYTES, SECTORS_PER_BLOCK, SECTOR_BYTES};
use crate::error::Error;

/// Per-allocation target compression ratio: how much of every 128B entry is
/// reserved in device memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TargetRatio {
    R1,
    R4over3,
    R2,
    R4,
    /// Zero mode: 8 bytes per entry stay on the device.
    R16zero,
}

impl TargetRatio {
    pub const ALL: [TargetRatio; 5] = [
        TargetRatio::R1,
        TargetRatio::R4over3,
        TargetRatio::R2,
        TargetRatio::R4,
        TargetRatio::R16zero,
    ];

    /// Sector-granular candidates, ascending ratio.
    pub const SECTORED: [TargetRatio; 4] = [
        TargetRatio::R1,
        TargetRatio::R4over3,
        TargetRatio::R2,
        TargetRatio::R4,
    ];

    /// Device sectors reserved per entry; zero mode reserves none (an 8-byte slot).
    pub fn device_sectors(self) -> usize {
        match self {
            TargetRatio::R1 => 4,
            TargetRatio::R4over3 => 3,
            TargetRatio::R2 => 2,
            TargetRatio::R4 => 1,
            TargetRatio::R16zero => 0,
        }
    }

    pub fn device_bytes(self) -> usize {
        match self {
            TargetRatio::R16zero => 8,
            t => t.device_sectors() * SECTOR_BYTES,
        }
    }

    /// Buddy bytes reserved per entry.
    pub fn buddy_bytes(self) -> usize {
        match self {
            TargetRatio::R16zero => BLOCK_BYTES,
            t => (SECTORS_PER_BLOCK - t.device_sectors()) * SECTOR_BYTES,
        }
    }

    pub fn ratio(self) -> f64 {
        BLOCK_BYTES as f64 / self.device_bytes() as f64
    }

    pub fn is_zero_mode(self) -> bool {
        self == TargetRatio::R16zero
    }

    pub fn is_compressed(self) -> bool {
        self != TargetRatio::R1
    }

    /// 3-bit code used in translation entries.
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetRatio::R1 => "R1",
            TargetRatio::R4over3 => "R4over3",
            TargetRatio::R2 => "R2",
            TargetRatio::R4 => "R4",
            TargetRatio::R16zero => "R16zero",
        }
    }
}

impl fmt::Display for TargetRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        TargetRatio::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown target ratio {s:?}")))
    }
}
