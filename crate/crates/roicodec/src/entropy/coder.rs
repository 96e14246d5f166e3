//! Bit-exact range coder over 16-bit quantized CDF tables.
//!
//! Classic carry-free arithmetic coder with 32-bit interval registers and
//! bitwise renormalization (underflow handled by pending-bit counting).
//! Frequencies total exactly `1 << 16` and every symbol has mass >= 1, so
//! round trips are exact for any table produced by [`CdfTable::from_pmf`].

use crate::error::{Error, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;

const HALF: u64 = 1 << 31;
const QUARTER: u64 = 1 << 30;
const THREE_QUARTERS: u64 = 3 << 30;
const MASK32: u64 = (1 << 32) - 1;

/// Cumulative frequency table: `cum[s]..cum[s+1]` is symbol `s`'s slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    cum: Vec<u32>,
}

impl CdfTable {
    /// Quantizes a probability mass function to 16-bit frequencies that sum
    /// to exactly `FREQ_TOTAL` with every symbol's mass at least 1.
    pub fn from_pmf(pmf: &[f64]) -> CdfTable {
        assert!(!pmf.is_empty(), "empty pmf");
        assert!(
            pmf.len() <= (FREQ_TOTAL as usize) / 2,
            "alphabet too large for 16-bit frequencies"
        );
        let sum: f64 = pmf.iter().sum();
        let norm = if sum > 0.0 { 1.0 / sum } else { 0.0 };
        let mut freqs: Vec<i64> = pmf
            .iter()
            .map(|&p| {
                let q = (p.max(0.0) * norm * FREQ_TOTAL as f64).round() as i64;
                q.max(1)
            })
            .collect();
        // repair the rounding drift on the largest bins
        let mut drift: i64 = FREQ_TOTAL as i64 - freqs.iter().sum::<i64>();
        while drift != 0 {
            let step = drift.signum();
            // largest bin that can absorb the step without dropping below 1
            let target = freqs
                .iter()
                .enumerate()
                .filter(|t| step > 0 || *t.1 > 1)
                .max_by_key(|t| *t.1)
                .map(|t| t.0)
                .expect("pmf cannot be balanced");
            freqs[target] += step;
            drift -= step;
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freqs {
            acc += f as u32;
            cum.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        CdfTable { cum }
    }

    pub fn num_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn freq(&self, s: usize) -> u32 {
        self.cum[s + 1] - self.cum[s]
    }

    pub fn low(&self, s: usize) -> u32 {
        self.cum[s]
    }

    /// Symbol whose slot contains `scaled` (binary search).
    fn find(&self, scaled: u32) -> usize {
        let mut lo = 0usize;
        let mut hi = self.num_symbols();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= scaled {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    current: u8,
    nbits: u8,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            current: 0,
            nbits: 0,
        }
    }

    fn push(&mut self, bit: bool) {
        self.current = (self.current << 1) | bit as u8;
        self.nbits += 1;
        if self.nbits == 8 {
            self.bytes.push(self.current);
            self.current = 0;
            self.nbits = 0;
        }
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.current <<= 8 - self.nbits;
            self.bytes.push(self.current);
        }
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    current: u8,
    nbits: u8,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader {
            bytes,
            pos: 0,
            current: 0,
            nbits: 0,
        }
    }

    /// Reads past the end as zeros (standard arithmetic-coder tail).
    fn next(&mut self) -> bool {
        if self.nbits == 0 {
            self.current = if self.pos < self.bytes.len() {
                let b = self.bytes[self.pos];
                self.pos += 1;
                b
            } else {
                0
            };
            self.nbits = 8;
        }
        self.nbits -= 1;
        (self.current >> self.nbits) & 1 == 1
    }
}

/// Encodes `symbols[i]` with `tables[i]`; the slices must be equal length.
pub fn range_encode(symbols: &[u32], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    assert_eq!(
        symbols.len(),
        tables.len(),
        "one CDF table per symbol required"
    );
    let mut low: u64 = 0;
    let mut high: u64 = MASK32;
    let mut pending: u64 = 0;
    let mut out = BitWriter::new();

    let emit = |bit: bool, pending: &mut u64, out: &mut BitWriter| {
        out.push(bit);
        while *pending > 0 {
            out.push(!bit);
            *pending -= 1;
        }
    };

    for (&s, table) in symbols.iter().zip(tables) {
        let s = s as usize;
        if s >= table.num_symbols() {
            return Err(Error::Coder(format!(
                "symbol {s} outside table support of {} symbols",
                table.num_symbols()
            )));
        }
        let range = high - low + 1;
        let cum_lo = table.low(s) as u64;
        let cum_hi = cum_lo + table.freq(s) as u64;
        high = low + (range * cum_hi >> FREQ_BITS) - 1;
        low += range * cum_lo >> FREQ_BITS;
        loop {
            if high < HALF {
                emit(false, &mut pending, &mut out);
            } else if low >= HALF {
                emit(true, &mut pending, &mut out);
                low -= HALF;
                high -= HALF;
            } else if low >= QUARTER && high < THREE_QUARTERS {
                pending += 1;
                low -= QUARTER;
                high -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
        }
    }
    // flush: one disambiguating bit plus pendings
    pending += 1;
    if low < QUARTER {
        emit(false, &mut pending, &mut out);
    } else {
        emit(true, &mut pending, &mut out);
    }
    Ok(out.finish())
}

/// Decodes `tables.len()` symbols. The byte stream must come from
/// [`range_encode`] with the same tables in the same order.
pub fn range_decode(bytes: &[u8], tables: &[&CdfTable]) -> Result<Vec<u32>> {
    let mut reader = BitReader::new(bytes);
    let mut low: u64 = 0;
    let mut high: u64 = MASK32;
    let mut value: u64 = 0;
    for _ in 0..32 {
        value = (value << 1) | reader.next() as u64;
    }
    let mut out = Vec::with_capacity(tables.len());
    for table in tables {
        let range = high - low + 1;
        let scaled = (((value - low + 1) << FREQ_BITS) - 1) / range;
        if scaled >= FREQ_TOTAL as u64 {
            return Err(Error::Coder("truncated or corrupt stream".into()));
        }
        let s = table.find(scaled as u32);
        out.push(s as u32);
        let cum_lo = table.low(s) as u64;
        let cum_hi = cum_lo + table.freq(s) as u64;
        high = low + (range * cum_hi >> FREQ_BITS) - 1;
        low += range * cum_lo >> FREQ_BITS;
        loop {
            if high < HALF {
                // nothing
            } else if low >= HALF {
                low -= HALF;
                high -= HALF;
                value -= HALF;
            } else if low >= QUARTER && high < THREE_QUARTERS {
                low -= QUARTER;
                high -= QUARTER;
                value -= QUARTER;
            } else {
                break;
            }
            low <<= 1;
            high = (high << 1) | 1;
            value = (value << 1) | reader.next() as u64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sequence_is_tiny_flush() {
        let bytes = range_encode(&[], &[]).unwrap();
        assert!(bytes.len() <= 8, "flush should be at most 8 bytes");
        assert!(range_decode(&bytes, &[]).unwrap().is_empty());
    }

    #[test]
    fn single_symbol_alphabet_decodes_any_count() {
        let table = CdfTable::from_pmf(&[1.0]);
        let symbols = vec![0u32; 1000];
        let tables: Vec<&CdfTable> = vec![&table; 1000];
        let bytes = range_encode(&symbols, &tables).unwrap();
        // zero information content: constant-size stream
        assert!(bytes.len() <= 8);
        assert_eq!(range_decode(&bytes, &tables).unwrap(), symbols);
    }

    #[test]
    fn uniform_256_length_near_entropy() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1234);
        let table = CdfTable::from_pmf(&[1.0; 256]);
        let n = 100_000;
        let symbols: Vec<u32> = (0..n).map(|_| rng.random_range(0..256u32)).collect();
        let tables: Vec<&CdfTable> = vec![&table; n];
        let bytes = range_encode(&symbols, &tables).unwrap();
        let len = bytes.len() as f64;
        assert!(
            len >= 0.999 * n as f64 && len <= 1.001 * n as f64 + 16.0,
            "length {len} vs expected ~{n}"
        );
        assert_eq!(range_decode(&bytes, &tables).unwrap(), symbols);
    }

    #[test]
    fn symbol_out_of_support_is_an_error() {
        let table = CdfTable::from_pmf(&[0.5, 0.5]);
        let err = range_encode(&[2], &[&table]);
        assert!(matches!(err, Err(crate::error::Error::Coder(_))));
    }

    #[test]
    fn skewed_table_roundtrip() {
        let table = CdfTable::from_pmf(&[0.9, 0.05, 0.03, 0.015, 0.005]);
        let symbols: Vec<u32> = (0..500).map(|i| (i * 7 % 5) as u32).collect();
        let tables: Vec<&CdfTable> = vec![&table; 500];
        let bytes = range_encode(&symbols, &tables).unwrap();
        assert_eq!(range_decode(&bytes, &tables).unwrap(), symbols);
    }

    #[test]
    fn pmf_quantization_preserves_total() {
        let pmf = vec![1e-12, 0.3, 0.7, 1e-12];
        let table = CdfTable::from_pmf(&pmf);
        assert_eq!(table.low(0), 0);
        assert_eq!(
            (0..table.num_symbols()).map(|s| table.freq(s)).sum::<u32>(),
            FREQ_TOTAL
        );
        assert!(table.freq(0) >= 1 && table.freq(3) >= 1);
    }
}
