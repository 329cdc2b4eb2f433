//! Byte-oriented range coder over 16-bit cumulative tables.
//!
//! State is a 32-bit `range` and a `low` register with one carry bit above
//! bit 31. Output bytes are held back in a one-byte cache plus a run of
//! pending `0xFF` bytes until a carry can no longer reach them, so nothing
//! already written is ever patched. The very first cached byte is always
//! zero and is not emitted; the decoder primes its code register from the
//! next four bytes. A flush writes the remaining four bytes of `low`.
//!
//! The top cumulative interval of every table absorbs the rounding slack
//! of `range / TOTAL`, so no part of the range is wasted at the top.

use crate::entropy::{BinRef, CdfTable, PRECISION_BITS, TOTAL};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

/// Encoded bytes of one segment.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
}

impl Bitstream {
    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    fn put(&mut self, b: u8) {
        if self.skip_first {
            debug_assert_eq!(b, 0);
            self.skip_first = false;
        } else {
            self.out.push(b);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut b = self.cache;
            loop {
                self.put(b.wrapping_add(carry));
                b = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Code the interval `[cum, cum + freq)` out of `TOTAL`.
    pub fn encode_interval(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        if cum + freq == TOTAL {
            self.range -= r * cum;
        } else {
            self.range = r * freq;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Code offset `d` under `table`, escaping it if needed.
    pub fn encode_symbol(&mut self, d: i64, table: &CdfTable) -> Result<()> {
        match table.locate(d)? {
            BinRef::Direct(bin) => {
                let (c, f) = table.range(bin);
                self.encode_interval(c, f);
            }
            BinRef::Escape { bin, payload } => {
                let (c, f) = table.range(bin);
                self.encode_interval(c, f);
                self.encode_interval(payload, 1);
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Bitstream {
        for _ in 0..5 {
            self.shift_low();
        }
        Bitstream { bytes: self.out }
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| Error::Coder("truncated stream".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    fn target(&self) -> (u32, u32) {
        let r = self.range >> PRECISION_BITS;
        ((self.code / r).min(TOTAL - 1), r)
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        if cum + freq == TOTAL {
            self.range -= r * cum;
        } else {
            self.range = r * freq;
        }
        if self.code >= self.range {
            return Err(Error::Coder("corrupt stream: code outside interval".into()));
        }
        self.normalize()
    }

    /// Decode a value coded with `encode_interval(v, 1)`.
    pub fn decode_raw16(&mut self) -> Result<u32> {
        let (v, r) = self.target();
        self.consume(r, v, 1)?;
        Ok(v)
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i64> {
        let (v, r) = self.target();
        let bin = table.find(v);
        let (c, f) = table.range(bin);
        self.consume(r, c, f)?;
        if table.is_escape(bin) {
            let payload = self.decode_raw16()?;
            Ok(table.offset_of(bin, Some(payload)))
        } else {
            Ok(table.offset_of(bin, None))
        }
    }

    /// Fails unless every input byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.input.len() {
            return Err(Error::Coder(format!(
                "{} trailing bytes after last symbol",
                self.input.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Code `symbols[i]` under `tables[i]`.
pub fn encode(symbols: &[i64], tables: &[CdfTable]) -> Result<Bitstream> {
    if symbols.len() != tables.len() {
        return Err(Error::Shape(format!(
            "{} symbols but {} tables",
            symbols.len(),
            tables.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode_symbol(s, t)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode`]; needs the same table sequence.
pub fn decode(bits: &Bitstream, tables: &[CdfTable]) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(&bits.bytes)?;
    let out = tables
        .iter()
        .map(|t| dec.decode_symbol(t))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
