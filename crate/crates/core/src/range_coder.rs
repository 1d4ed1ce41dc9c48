//! Byte-oriented range coder over 16-bit cumulative tables.
//!
//! The coding interval lives in a 64-bit window: `range` stays in
//! `[2^56, 2^64)` between symbols and bytes leave from the top of `low`.
//! Carries out of the window are resolved with a one-byte cache plus a count
//! of pending `0xFF` bytes.
//!
//! Payload layout: the big-endian byte expansion of a number inside the
//! final interval, with trailing zero bytes removed. The decoder reads past
//! the end as zeros, so the shortest such expansion is emitted: at most one
//! byte more than the bytes already shifted out.

use crate::entropy::{SymbolCdf, PROB_BITS, PROB_TOTAL};

const TOP: u64 = 1 << 56;
const FLUSH_MASK: u128 = (1 << 56) - 1;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    // 64-bit window plus one carry bit
    low: u128,
    range: u64,
    cache: u8,
    has_cache: bool,
    pending: usize,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            cache: 0,
            has_cache: false,
            pending: 0,
            out: Vec::new(),
        }
    }

    pub fn encode_symbol<C: SymbolCdf + ?Sized>(&mut self, cdf: &C, k: i32) {
        debug_assert!(k >= cdf.min_symbol() && k <= cdf.max_symbol());
        let start = cdf.cumulative(k);
        let end = cdf.cumulative(k + 1);
        self.encode_interval(start, end - start);
    }

    /// Narrows to `[start, start + freq) / 2^16` of the current range.
    pub fn encode_interval(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += r as u128 * start as u128;
        self.range = r * freq as u64;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        let carry = (self.low >> 64) as u8;
        let window = self.low as u64;
        if window < 0xFF00_0000_0000_0000 || carry != 0 {
            if self.has_cache {
                self.out.push(self.cache.wrapping_add(carry));
            }
            for _ in 0..self.pending {
                self.out.push(0xFFu8.wrapping_add(carry));
            }
            self.pending = 0;
            self.cache = (window >> 56) as u8;
            self.has_cache = true;
        } else {
            self.pending += 1;
        }
        self.low = (window << 8) as u128;
    }

    /// Bytes emitted so far, not counting the cache and pending bytes.
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    pub fn finish(mut self) -> Vec<u8> {
        // Round low up to a multiple of 2^56; range >= 2^56 keeps it inside.
        self.low = (self.low + FLUSH_MASK) & !FLUSH_MASK;
        self.shift_low();
        self.shift_low();
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u64,
    range: u64,
    overread: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut dec = Self {
            data,
            pos: 0,
            code: 0,
            range: u64::MAX,
            overread: 0,
        };
        for _ in 0..8 {
            dec.code = (dec.code << 8) | dec.next_byte() as u64;
        }
        dec
    }

    fn next_byte(&mut self) -> u8 {
        match self.data.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overread += 1;
                0
            }
        }
    }

    /// Never fails: garbage input still yields symbols inside the support.
    pub fn decode_symbol<C: SymbolCdf + ?Sized>(&mut self, cdf: &C) -> i32 {
        let r = self.range >> PROB_BITS;
        let target = (self.code / r).min(PROB_TOTAL as u64 - 1) as u32;
        let (mut lo, mut hi) = (cdf.min_symbol(), cdf.max_symbol());
        while lo < hi {
            let mid = lo + (hi - lo + 1) / 2;
            if cdf.cumulative(mid) <= target {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let start = cdf.cumulative(lo);
        let freq = cdf.cumulative(lo + 1) - start;
        self.code = self.code.wrapping_sub(r * start as u64);
        self.range = r * freq as u64;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        lo
    }

    /// Input bytes consumed.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Zero bytes synthesized past the end of the payload.
    pub fn overread(&self) -> usize {
        self.overread
    }
}
