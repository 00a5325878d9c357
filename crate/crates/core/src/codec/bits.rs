//! MSB-first bit writer and reader used by the block codec.

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    acc_bits: u32,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bytes: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bytes),
            ..Self::default()
        }
    }

    /// Append the low `count` bits of `value`, most significant first.
    pub fn put(&mut self, value: u32, count: u32) {
        debug_assert!(count <= 32);
        if count == 0 {
            return;
        }
        let masked = if count == 32 {
            value as u64
        } else {
            (value as u64) & ((1u64 << count) - 1)
        };
        // acc_bits < 32 on entry, so the shift never overflows
        self.acc = (self.acc << count) | masked;
        self.acc_bits += count;
        self.len += count as usize;
        if self.acc_bits >= 32 {
            self.acc_bits -= 32;
            self.bytes.extend_from_slice(&((self.acc >> self.acc_bits) as u32).to_be_bytes());
            self.acc &= (1u64 << self.acc_bits) - 1;
        }
    }

    pub fn bit_len(&self) -> usize {
        self.len
    }

    /// Flush the trailing partial byte (zero padded) and return `(bytes, bit_length)`.
    pub fn finish(mut self) -> (Vec<u8>, usize) {
        let tail = self.acc_bits.div_ceil(8);
        if tail > 0 {
            let aligned = (self.acc << (8 * tail - self.acc_bits)) as u32;
            self.bytes.extend_from_slice(&aligned.to_be_bytes()[4 - tail as usize..]);
        }
        (self.bytes, self.len)
    }
}

#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: usize,
    pos: usize,
}

impl<'a> BitReader<'a> {
    /// `len` is the number of valid bits; it must not exceed `bytes.len() * 8`.
    pub fn new(bytes: &'a [u8], len: usize) -> Self {
        debug_assert!(len <= bytes.len() * 8);
        Self { bytes, len, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.len - self.pos
    }

    /// Read `count` bits (at most 32) as an unsigned integer.
    pub fn get(&mut self, count: u32) -> Result<u32> {
        debug_assert!(count <= 32);
        if self.remaining() < count as usize {
            return Err(Error::Decode {
                bit_offset: self.pos,
                reason: format!(
                    "stream ends after {} bits, {} more needed",
                    self.len,
                    count as usize - self.remaining()
                ),
            });
        }
        if count == 0 {
            return Ok(0);
        }
        let i = self.pos / 8;
        let window = match self.bytes.get(i..i + 8) {
            Some(w) => u64::from_be_bytes(w.try_into().unwrap()),
            None => {
                let mut w = [0u8; 8];
                let n = self.bytes.len() - i;
                w[..n].copy_from_slice(&self.bytes[i..]);
                u64::from_be_bytes(w)
            }
        };
        let out = (window << (self.pos % 8)) >> (64 - count);
        self.pos += count as usize;
        Ok(out as u32)
    }

    /// Next bit without consuming it; the caller checks `remaining() > 0`.
    pub fn peek_bit(&self) -> bool {
        self.bytes[self.pos / 8] >> (7 - self.pos % 8) & 1 == 1
    }

    pub fn get_bit(&mut self) -> Result<bool> {
        if self.pos >= self.len {
            return self.get(1).map(|b| b == 1);
        }
        let bit = self.bytes[self.pos / 8] >> (7 - self.pos % 8) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }
}
