//! Static arithmetic coding of interleaved quantization levels.
//!
//! The coder is the classic 32-bit integer scheme with E1/E2/E3 (underflow)
//! renormalisation. Its probability model is a [`FrequencyTable`] built from
//! the whole symbol vector and sent ahead of the payload, so the decoder never
//! adapts. The table's serialized form is `(2s+1)` big-endian `u16` counts.

use crate::error::{DecodeStage, Error, Result};

const CODE_BITS: u32 = 32;
const TOP: u64 = (1 << CODE_BITS) - 1;
const HALF: u64 = 1 << (CODE_BITS - 1);
const QUARTER: u64 = 1 << (CODE_BITS - 2);
const THREE_QUARTERS: u64 = 3 * QUARTER;

/// Upper bound on the table total so that every counted symbol keeps a
/// nonempty sub-interval once the range has been renormalised above a quarter.
const MAX_TOTAL: u64 = QUARTER - (1 << 16);

/// The decoder always reads this many bits past the end of a valid stream.
const DECODER_LOOKAHEAD: usize = CODE_BITS as usize - 2;

/// Symbol counts shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: Vec<u32>,
    cumulative: Vec<u64>,
}

impl FrequencyTable {
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total == 0 {
            return Err(Error::contract("frequency table total must be at least 1"));
        }
        if total > MAX_TOTAL {
            return Err(Error::contract(format!("frequency table total {total} exceeds {MAX_TOTAL}")));
        }
        let mut cumulative = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &c in &counts {
            acc += c as u64;
            cumulative.push(acc);
        }
        Ok(Self { counts, cumulative })
    }

    /// Counts symbol occurrences and rescales them so that every count fits a
    /// `u16` while symbols that occur keep a count of at least one.
    pub fn from_symbols(symbols: &[u32], alphabet: usize) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::contract("cannot build a frequency table from no symbols"));
        }
        if alphabet == 0 || alphabet > u16::MAX as usize {
            return Err(Error::contract(format!("alphabet size {alphabet} out of range")));
        }
        let mut raw = vec![0u64; alphabet];
        for &s in symbols {
            let slot = raw
                .get_mut(s as usize)
                .ok_or_else(|| Error::contract(format!("symbol {s} outside alphabet of {alphabet}")))?;
            *slot += 1;
        }
        let max = *raw.iter().max().expect("alphabet nonempty");
        let total: u64 = raw.iter().sum();
        let counts = if max <= u16::MAX as u64 {
            raw.into_iter().map(|c| c as u32).collect()
        } else {
            let factor = (u16::MAX as f64 / max as f64).min((MAX_TOTAL - alphabet as u64) as f64 / total as f64);
            raw.into_iter()
                .map(|c| {
                    if c == 0 {
                        0
                    } else {
                        ((c as f64 * factor).floor() as u32).clamp(1, u16::MAX as u32)
                    }
                })
                .collect()
        };
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        *self.cumulative.last().expect("cumulative has a leading zero")
    }

    /// Serialized size in bits.
    pub fn size_bits(&self) -> usize {
        16 * self.counts.len()
    }

    /// Big-endian `u16` per symbol. Fails if a count does not fit.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(2 * self.counts.len());
        for &c in &self.counts {
            let c = u16::try_from(c).map_err(|_| Error::contract(format!("count {c} does not fit in 16 bits")))?;
            out.extend_from_slice(&c.to_be_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], alphabet: usize) -> Result<Self> {
        if bytes.len() != 2 * alphabet {
            return Err(Error::decode(
                DecodeStage::Table,
                format!("expected {} table bytes, found {}", 2 * alphabet, bytes.len()),
            ));
        }
        let counts = bytes
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect();
        Self::from_counts(counts).map_err(|e| Error::decode(DecodeStage::Table, e.to_string()))
    }
}

/// Packed bits, most significant bit of each byte first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub bit_len: usize,
}

impl Bitstream {
    pub fn new(bytes: Vec<u8>, bit_len: usize) -> Result<Self> {
        if bit_len > 8 * bytes.len() {
            return Err(Error::contract(format!(
                "bit length {bit_len} exceeds {} available bits",
                8 * bytes.len()
            )));
        }
        Ok(Self { bytes, bit_len })
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Equal length and equal bits, ignoring padding in the last byte.
    pub fn same_bits(&self, other: &Bitstream) -> bool {
        self.bit_len == other.bit_len && (0..self.bit_len).all(|i| self.bit(i) == other.bit(i))
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bit: bool) {
        if self.bit_len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.last_mut().expect("byte just ensured");
            *last |= 0x80 >> (self.bit_len % 8);
        }
        self.bit_len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        for i in (0..width).rev() {
            self.push((value >> i) & 1 == 1);
        }
    }

    fn push_with_pending(&mut self, bit: bool, pending: &mut u64) {
        self.push(bit);
        for _ in 0..*pending {
            self.push(!bit);
        }
        *pending = 0;
    }

    pub fn finish(self) -> Bitstream {
        Bitstream {
            bytes: self.bytes,
            bit_len: self.bit_len,
        }
    }
}

/// Reads bits from a stream; reads past the end yield zeros and are counted.
#[derive(Debug)]
pub struct BitReader<'a> {
    stream: &'a Bitstream,
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(stream: &'a Bitstream) -> Self {
        Self { stream, pos: 0 }
    }

    pub fn next_bit(&mut self) -> bool {
        let bit = if self.pos < self.stream.bit_len {
            self.stream.bytes[self.pos / 8] & (0x80 >> (self.pos % 8)) != 0
        } else {
            false
        };
        self.pos += 1;
        bit
    }

    pub fn read_bits(&mut self, width: u32) -> u64 {
        (0..width).fold(0, |acc, _| (acc << 1) | self.next_bit() as u64)
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

pub fn arithmetic_encode(symbols: &[u32], table: &FrequencyTable) -> Result<Bitstream> {
    let total = table.total();
    let mut out = BitWriter::new();
    let (mut low, mut high, mut pending) = (0u64, TOP, 0u64);
    for &s in symbols {
        let s = s as usize;
        if s >= table.alphabet() || table.counts[s] == 0 {
            return Err(Error::contract(format!("symbol {s} has zero count in the frequency table")));
        }
        let range = high - low + 1;
        high = low + range * table.cumulative[s + 1] / total - 1;
        low += range * table.cumulative[s] / total;
        loop {
            if high < HALF {
                out.push_with_pending(false, &mut pending);
            } else if low >= HALF {
                out.push_with_pending(true, &mut pending);
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
    pending += 1;
    out.push_with_pending(low >= QUARTER, &mut pending);
    Ok(out.finish())
}

/// Decodes exactly `n` symbols. A stream whose length disagrees with the
/// number of bits the decoder consumed is rejected as truncated or corrupt.
pub fn arithmetic_decode(bits: &Bitstream, table: &FrequencyTable, n: usize) -> Result<Vec<u32>> {
    let total = table.total();
    let mut reader = BitReader::new(bits);
    let (mut low, mut high) = (0u64, TOP);
    let mut value = reader.read_bits(CODE_BITS);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let range = high - low + 1;
        let scaled = ((value - low + 1) * total - 1) / range;
        // first symbol whose upper cumulative bound exceeds `scaled`
        let s = table.cumulative[1..].partition_point(|&c| c <= scaled);
        if s >= table.alphabet() {
            return Err(Error::decode(DecodeStage::Payload, "code value outside the coding interval"));
        }
        out.push(s as u32);
        high = low + range * table.cumulative[s + 1] / total - 1;
        low += range * table.cumulative[s] / total;
        loop {
            if high < HALF {
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
            value = (value << 1) | reader.next_bit() as u64;
        }
    }
    if reader.consumed() != bits.bit_len + DECODER_LOOKAHEAD {
        return Err(Error::decode(
            DecodeStage::Payload,
            format!(
                "bitstream holds {} bits but decoding {n} symbols implies {}",
                bits.bit_len,
                reader.consumed() as i64 - DECODER_LOOKAHEAD as i64
            ),
        ));
    }
    // The consumed-length test alone can be fooled when a cut changes the
    // last decoded symbols; an accepted stream must be the exact encoding.
    let canonical = arithmetic_encode(&out, table)?;
    if !canonical.same_bits(bits) {
        return Err(Error::decode(
            DecodeStage::Payload,
            "bitstream is not the encoding of the symbols it decodes to",
        ));
    }
    Ok(out)
}

/// Bits per symbol of a fixed-length code over `alphabet` symbols.
pub fn fixed_width(alphabet: usize) -> u32 {
    (usize::BITS - alphabet.saturating_sub(1).leading_zeros()).max(1)
}

pub fn encode_fixed(symbols: &[u32], alphabet: usize) -> Result<Bitstream> {
    let width = fixed_width(alphabet);
    let mut out = BitWriter::new();
    for &s in symbols {
        if s as usize >= alphabet {
            return Err(Error::contract(format!("symbol {s} outside alphabet of {alphabet}")));
        }
        out.push_bits(s as u64, width);
    }
    Ok(out.finish())
}

pub fn decode_fixed(bits: &Bitstream, alphabet: usize, n: usize) -> Result<Vec<u32>> {
    let width = fixed_width(alphabet);
    if bits.bit_len != n * width as usize {
        return Err(Error::decode(
            DecodeStage::Payload,
            format!("expected {} fixed-length bits, found {}", n * width as usize, bits.bit_len),
        ));
    }
    let mut reader = BitReader::new(bits);
    (0..n)
        .map(|_| {
            let s = reader.read_bits(width) as u32;
            if (s as usize) < alphabet {
                Ok(s)
            } else {
                Err(Error::decode(DecodeStage::Payload, format!("symbol {s} outside alphabet")))
            }
        })
        .collect()
}

/// Shannon entropy in bits of a count vector.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in entropy estimate in bits per symbol.
pub fn empirical_entropy(symbols: &[u32]) -> Result<f64> {
    let max = *symbols
        .iter()
        .max()
        .ok_or_else(|| Error::contract("entropy of an empty sequence"))?;
    let mut counts = vec![0u64; max as usize + 1];
    for &s in symbols {
        counts[s as usize] += 1;
    }
    Ok(entropy_of_counts(&counts))
}

/// Average-length gap between coding `|φ|` plus a raw sign bit and coding the
/// sign-interleaved symbol, both estimated by entropy.
///
/// `p0 = P(φ = 0)` and `side[j-1] = P(φ = j) = P(φ = -j)` for `j = 1..=J`,
/// so that `p0 + 2·Σ side = 1`. The result equals `p0` analytically.
pub fn lemma2_length_gap(p0: f64, side: &[f64]) -> Result<f64> {
    let valid = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
    if !valid(p0) || !side.iter().all(|&p| valid(p)) {
        return Err(Error::contract("probabilities must lie in [0, 1]"));
    }
    let sum = p0 + 2.0 * side.iter().sum::<f64>();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("p0 + 2·Σp_j = {sum}, expected 1")));
    }
    let xlog = |p: f64| if p > 0.0 { p * p.log2() } else { 0.0 };
    let interleaved = -(side.iter().map(|&p| 2.0 * xlog(p)).sum::<f64>() + xlog(p0));
    let magnitude = -(side.iter().map(|&p| xlog(2.0 * p)).sum::<f64>() + xlog(p0));
    Ok(magnitude + 1.0 - interleaved)
}
