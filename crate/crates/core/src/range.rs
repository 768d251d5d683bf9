//! Carry-less range coder: 64-bit state, 32-bit renormalization, 16-bit
//! probability precision.
//!
//! Symbols are coded against explicit cumulative frequency tables: a CDF is
//! a slice `[0, c₁, …, 65536]` that is strictly increasing (every bin gets a
//! frequency of at least 1). Encoder and decoder walk identical state
//! transitions, so the decoder consumes exactly the bytes the encoder
//! produced; output is a deterministic function of the symbol/CDF sequence.
//!
//! Carries are avoided the classic way: when the interval straddles a
//! 32-bit output boundary and has shrunk below 2^16, the range is clipped to
//! end at the next 2^16 boundary. That wastes a fraction of a bit on rare
//! occasions instead of ever propagating a carry into emitted bytes.

use crate::error::Error;
use crate::Result;

/// log2 of the total frequency mass every CDF must sum to.
pub const PRECISION_BITS: u32 = 16;

/// Total frequency mass of a CDF (2^16).
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

const TOP_MASK: u64 = !0u64 << 32;
const BOTTOM: u64 = 1 << PRECISION_BITS;

/// Streaming range encoder.
#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
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
            out: Vec::new(),
        }
    }

    /// Bytes emitted so far (excluding the final flush).
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    /// Encodes `symbol` against `cdf`, where `cdf[s]..cdf[s+1]` is the
    /// frequency interval of symbol `s` and `cdf` ends at [`TOTAL_FREQ`].
    pub fn encode(&mut self, symbol: usize, cdf: &[u32]) -> Result<()> {
        debug_assert!(symbol + 1 < cdf.len(), "symbol outside CDF");
        let lo = cdf[symbol];
        let hi = cdf[symbol + 1];
        if hi <= lo {
            return Err(Error::ZeroWidthBin { index: symbol });
        }
        debug_assert_eq!(*cdf.last().unwrap(), TOTAL_FREQ);

        let r = self.range >> PRECISION_BITS;
        self.low += r * lo as u64;
        self.range = r * (hi - lo) as u64;
        self.renormalize();
        Ok(())
    }

    fn renormalize(&mut self) {
        loop {
            // Settled when low and the last interval value share their top
            // 32 bits. The inclusive end (range >= 1) never overflows.
            if (self.low ^ (self.low + (self.range - 1))) & TOP_MASK != 0 {
                if self.range >= BOTTOM {
                    break;
                }
                // Interval straddles an output boundary and is tiny: clip it
                // to end at the next 2^16 boundary (cannot be empty, since a
                // straddling interval shorter than 2^16 never starts on one).
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
                debug_assert!(self.range != 0);
            }
            self.out
                .extend_from_slice(&(((self.low >> 32) as u32).to_be_bytes()));
            self.low <<= 32;
            self.range <<= 32;
        }
    }

    /// Flushes the remaining state (8 bytes) and returns the byte stream.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..2 {
            self.out
                .extend_from_slice(&(((self.low >> 32) as u32).to_be_bytes()));
            self.low <<= 32;
        }
        self.out
    }
}

/// Streaming range decoder over a byte slice.
#[derive(Debug)]
pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut dec = Self {
            low: 0,
            range: u64::MAX,
            code: 0,
            bytes,
            pos: 0,
        };
        for _ in 0..2 {
            dec.code = (dec.code << 32) | dec.read_word()? as u64;
        }
        Ok(dec)
    }

    fn read_word(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::TruncatedPayload);
        }
        let w = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(w)
    }

    /// Decodes one symbol against `cdf` (same table the encoder used).
    pub fn decode(&mut self, cdf: &[u32]) -> Result<usize> {
        debug_assert_eq!(*cdf.last().unwrap(), TOTAL_FREQ);
        let r = self.range >> PRECISION_BITS;
        // Wrapping: a tampered stream may push `code` outside the interval;
        // the clamp below still yields a valid (garbage) symbol.
        let off = self.code.wrapping_sub(self.low) / r;
        let target = off.min((TOTAL_FREQ - 1) as u64) as u32;

        // Binary search: greatest s with cdf[s] <= target.
        let symbol = cdf.partition_point(|&c| c <= target) - 1;
        let lo = cdf[symbol];
        let hi = cdf[symbol + 1];
        if hi <= lo {
            return Err(Error::ZeroWidthBin { index: symbol });
        }

        self.low += r * lo as u64;
        self.range = r * (hi - lo) as u64;
        self.renormalize()?;
        Ok(symbol)
    }

    fn renormalize(&mut self) -> Result<()> {
        loop {
            if (self.low ^ (self.low + (self.range - 1))) & TOP_MASK != 0 {
                if self.range >= BOTTOM {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOTTOM - 1);
                debug_assert!(self.range != 0);
            }
            self.code = (self.code << 32) | self.read_word()? as u64;
            self.low <<= 32;
            self.range <<= 32;
        }
        Ok(())
    }
}

/// One-shot helper: encodes `symbols[i]` against `cdfs[i]`.
pub fn range_encode(symbols: &[usize], cdfs: &[&[u32]]) -> Result<Vec<u8>> {
    debug_assert_eq!(symbols.len(), cdfs.len());
    let mut enc = RangeEncoder::new();
    for (&s, cdf) in symbols.iter().zip(cdfs) {
        enc.encode(s, cdf)?;
    }
    Ok(enc.finish())
}

/// One-shot helper: decodes `cdfs.len()` symbols.
pub fn range_decode(bytes: &[u8], cdfs: &[&[u32]]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    cdfs.iter().map(|cdf| dec.decode(cdf)).collect()
}

/// Quantizes a positive pmf to integer frequencies summing to [`TOTAL_FREQ`]
/// with every bin at least 1, then returns the cumulative table
/// `[0, …, TOTAL_FREQ]`. Deterministic: remainders are distributed by
/// largest fractional part, ties to the lower index.
pub fn quantize_cdf(pmf: &[f64]) -> Vec<u32> {
    let n = pmf.len();
    assert!(n >= 1 && n < (TOTAL_FREQ / 2) as usize, "pmf length {n} unsupported");
    let total: f64 = pmf.iter().sum();
    assert!(total > 0.0, "pmf must have positive mass");

    let budget = (TOTAL_FREQ - n as u32) as f64;
    let mut freqs = Vec::with_capacity(n);
    let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut assigned: u32 = 0;
    for (i, &p) in pmf.iter().enumerate() {
        let target = (p.max(0.0) / total) * budget;
        let f = target.floor();
        freqs.push(f as u32 + 1);
        assigned += f as u32 + 1;
        fracs.push((target - f, i));
    }
    let mut left = TOTAL_FREQ - assigned;
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in fracs.iter() {
        if left == 0 {
            break;
        }
        freqs[i] += 1;
        left -= 1;
    }

    let mut cdf = Vec::with_capacity(n + 1);
    let mut acc = 0u32;
    cdf.push(0);
    for f in freqs {
        acc += f;
        cdf.push(acc);
    }
    debug_assert_eq!(acc, TOTAL_FREQ);
    cdf
}
