//! Bit-plane block compression.
//!
//! A block is encoded as its first word followed by the 33 delta bit-planes of
//! the remaining 31 words. Adjacent planes are XORed and every resulting
//! 31-bit symbol is written with a prefix-free code:
//!
//! | code                 | meaning                                            |
//! |----------------------|----------------------------------------------------|
//! | `001` + 5 bits       | run of `n + 2` all-zero symbols (2..=33)           |
//! | `01`                 | one all-zero symbol                                |
//! | `00000`              | all-ones symbol                                    |
//! | `00001`              | non-zero symbol whose delta plane is all zero      |
//! | `00010` + 5 bits     | two adjacent ones starting at the given position   |
//! | `00011` + 5 bits     | a single one at the given position                 |
//! | `1` + 31 bits        | verbatim symbol                                    |
//!
//! The first word is `000` when zero and `1` + 32 bits otherwise.

use crate::codec::bits::{BitReader, BitWriter};
use crate::codec::{Block128, CompressedBlock, WORDS_PER_BLOCK};
use crate::error::{Error, Result};

/// Number of delta bit-planes (deltas are 33-bit signed values).
pub const PLANES: usize = 33;
/// Width of one plane symbol: one bit per delta.
pub const SYMBOL_BITS: u32 = 31;
const SYMBOL_MASK: u32 = (1 << SYMBOL_BITS) - 1;
const MAX_RUN: usize = 33;

/// In-place transpose of a 32x32 bit matrix: afterwards bit `i` of `rows[j]`
/// equals bit `j` of the original `rows[i]`.
fn transpose32(rows: &mut [u32; 32]) {
    let mut j = 16;
    let mut mask: u32 = 0x0000_ffff;
    while j != 0 {
        let mut k = 0;
        while k < 32 {
            let t = ((rows[k] >> j) ^ rows[k + j]) & mask;
            rows[k + j] ^= t;
            rows[k] ^= t << j;
            k = (k + j + 1) & !j;
        }
        j >>= 1;
        mask ^= mask << j;
    }
}

/// Delta bit-planes of a block. `planes[0]` is the sign plane (bit 32 of each
/// delta) and `planes[k]` holds bit `32 - k`; bit `i` of a plane belongs to
/// delta `i`.
pub fn delta_planes(block: &Block128) -> [u32; PLANES] {
    let w = &block.words;
    let mut low = [0u32; 32];
    let mut sign = 0u32;
    for i in 0..WORDS_PER_BLOCK - 1 {
        let d = w[i + 1] as i64 - w[i] as i64;
        low[i] = d as u32;
        sign |= (((d >> 32) & 1) as u32) << i;
    }
    transpose32(&mut low);
    let mut planes = [0u32; PLANES];
    planes[0] = sign;
    for k in 1..PLANES {
        planes[k] = low[32 - k] & SYMBOL_MASK;
    }
    planes
}

fn block_from_planes(base: u32, planes: &[u32; PLANES], bit_offset: usize) -> Result<Block128> {
    let mut low = [0u32; 32];
    for k in 1..PLANES {
        low[32 - k] = planes[k];
    }
    transpose32(&mut low);
    let mut words = [0u32; WORDS_PER_BLOCK];
    words[0] = base;
    let mut prev = base as i64;
    for i in 0..WORDS_PER_BLOCK - 1 {
        let sign = ((planes[0] >> i) & 1) as i64;
        let delta = low[i] as i64 - (sign << 32);
        let next = prev + delta;
        if !(0..=u32::MAX as i64).contains(&next) {
            return Err(Error::Decode {
                bit_offset,
                reason: format!("delta {i} reconstructs word {next} outside 32-bit range"),
            });
        }
        words[i + 1] = next as u32;
        prev = next;
    }
    Ok(Block128 { words })
}

fn two_adjacent_ones(x: u32) -> Option<u32> {
    let p = x.trailing_zeros();
    (p < SYMBOL_BITS - 1 && x == 0b11 << p).then_some(p)
}

pub fn compress(block: &Block128) -> CompressedBlock {
    // worst case is 33 + 33 * 32 bits
    let mut w = BitWriter::with_capacity(137);
    let base = block.words[0];
    if base == 0 {
        w.put(0b000, 3);
    } else {
        w.put(1, 1);
        w.put(base, 32);
    }

    let planes = delta_planes(block);
    let mut dbx = [0u32; PLANES];
    dbx[0] = planes[0];
    for k in 1..PLANES {
        dbx[k] = planes[k - 1] ^ planes[k];
    }

    let mut k = 0;
    while k < PLANES {
        let x = dbx[k];
        if x == 0 {
            let run = dbx[k..].iter().take_while(|&&s| s == 0).count();
            if run >= 2 {
                w.put(0b001, 3);
                w.put((run - 2) as u32, 5);
            } else {
                w.put(0b01, 2);
            }
            k += run;
            continue;
        }
        if x == SYMBOL_MASK {
            w.put(0b00000, 5);
        } else if planes[k] == 0 {
            w.put(0b00001, 5);
        } else if let Some(p) = two_adjacent_ones(x) {
            w.put(0b00010, 5);
            w.put(p, 5);
        } else if x.count_ones() == 1 {
            w.put(0b00011, 5);
            w.put(x.trailing_zeros(), 5);
        } else {
            w.put(1 << SYMBOL_BITS | x, SYMBOL_BITS + 1);
        }
        k += 1;
    }

    let (bytes, bit_length) = w.finish();
    CompressedBlock { bytes, bit_length }
}

pub fn decompress(cb: &CompressedBlock) -> Result<Block128> {
    if cb.bit_length > cb.bytes.len() * 8 {
        return Err(Error::Decode {
            bit_offset: cb.bytes.len() * 8,
            reason: format!(
                "bit length {} exceeds {} buffered bytes",
                cb.bit_length,
                cb.bytes.len()
            ),
        });
    }
    let mut r = BitReader::new(&cb.bytes, cb.bit_length);

    let base = if r.get_bit()? {
        r.get(32)?
    } else {
        let at = r.position();
        if r.get(2)? != 0 {
            return Err(Error::Decode {
                bit_offset: at - 1,
                reason: "invalid base-word code".into(),
            });
        }
        0
    };

    let mut planes = [0u32; PLANES];
    let mut k = 0;
    let mut prev = 0u32;
    // Each symbol either gives the XOR against the previous plane, or the plane itself.
    let mut push = |k: &mut usize, x: Option<u32>, prev: &mut u32| {
        let plane = match x {
            Some(x) => *prev ^ x,
            None => 0,
        };
        planes[*k] = plane;
        *prev = plane;
        *k += 1;
    };

    while k < PLANES {
        let at = r.position();
        if r.remaining() > SYMBOL_BITS as usize && r.peek_bit() {
            let x = r.get(SYMBOL_BITS + 1)? & SYMBOL_MASK;
            push(&mut k, Some(x), &mut prev);
        } else if r.get_bit()? {
            let x = r.get(SYMBOL_BITS)?;
            push(&mut k, Some(x), &mut prev);
        } else if r.get_bit()? {
            push(&mut k, Some(0), &mut prev);
        } else if r.get_bit()? {
            let run = r.get(5)? as usize + 2;
            if k + run > PLANES || run > MAX_RUN {
                return Err(Error::Decode {
                    bit_offset: at,
                    reason: format!("zero run of {run} overruns plane {k}"),
                });
            }
            for _ in 0..run {
                push(&mut k, Some(0), &mut prev);
            }
        } else {
            match r.get(2)? {
                0b00 => push(&mut k, Some(SYMBOL_MASK), &mut prev),
                0b01 => push(&mut k, None, &mut prev),
                0b10 => {
                    let p = r.get(5)?;
                    if p >= SYMBOL_BITS - 1 {
                        return Err(Error::Decode {
                            bit_offset: at,
                            reason: format!("adjacent-ones position {p} out of range"),
                        });
                    }
                    push(&mut k, Some(0b11 << p), &mut prev);
                }
                _ => {
                    let p = r.get(5)?;
                    if p >= SYMBOL_BITS {
                        return Err(Error::Decode {
                            bit_offset: at,
                            reason: format!("single-one position {p} out of range"),
                        });
                    }
                    push(&mut k, Some(1 << p), &mut prev);
                }
            }
        }
    }

    if r.remaining() != 0 {
        return Err(Error::Decode {
            bit_offset: r.position(),
            reason: format!("{} trailing bits after last plane", r.remaining()),
        });
    }
    block_from_planes(base, &planes, r.position())
}
