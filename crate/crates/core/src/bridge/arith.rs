//! Integer arithmetic coder used to translate rank streams between two rank
//! distributions.
//!
//! Witten-Neal-Cleary style coder with 62-bit code values and 128-bit
//! intermediate products, so it is bit-exact on every platform.
//!
//! Recoding works in two halves. The source ranks, followed by an
//! end-of-stream symbol, are arithmetic-encoded under the source table into
//! a bit string `b`. That bit string is then *decoded* under the destination
//! table (which has no end symbol), emitting destination ranks until the
//! mirrored encoder state has committed at least `|b|` bits. The value fed
//! to that decoder is the midpoint `b1000...` of the interval `b` denotes.
//! Re-encoding those destination ranks therefore reproduces `b` as a prefix,
//! and decoding that prefix under the source table stops at the end symbol
//! with the original ranks.

use crate::bridge::table::RankFrequencyTable;
use crate::error::{Error, Result};

const CODE_BITS: u32 = 62;
const TOP: u64 = (1 << CODE_BITS) - 1;
const QUARTER: u64 = 1 << (CODE_BITS - 2);
const HALF: u64 = 2 * QUARTER;
const THREE_QUARTERS: u64 = 3 * QUARTER;
/// Largest table total for which every symbol keeps a nonzero width.
pub const MAX_TOTAL: u64 = QUARTER;

/// Cumulative frequencies over ranks `1..=n`, optionally followed by an
/// end-of-stream symbol of count one.
#[derive(Clone, Debug)]
struct CodingModel {
    cum: Vec<u64>,
    ranks: usize,
    eos: bool,
}

impl CodingModel {
    fn new(table: &RankFrequencyTable, eos: bool) -> Result<Self> {
        if !table.is_smoothed() {
            return Err(Error::InvalidTable(
                "every rank needs a nonzero count (apply smoothing)".into(),
            ));
        }
        let mut cum = Vec::with_capacity(table.len() + 2);
        cum.push(0u64);
        let mut acc = 0u64;
        for &c in table.counts().iter().chain(eos.then_some(&1)) {
            acc = acc
                .checked_add(c)
                .filter(|&t| t <= MAX_TOTAL)
                .ok_or_else(|| Error::InvalidTable(format!("total exceeds {MAX_TOTAL}")))?;
            cum.push(acc);
        }
        Ok(CodingModel {
            cum,
            ranks: table.len(),
            eos,
        })
    }

    fn symbols(&self) -> usize {
        self.cum.len() - 1
    }

    fn total(&self) -> u64 {
        *self.cum.last().unwrap()
    }

    fn eos_symbol(&self) -> Option<usize> {
        self.eos.then_some(self.ranks)
    }

    fn bounds(&self, sym: usize) -> (u64, u64) {
        (self.cum[sym], self.cum[sym + 1])
    }

    /// Symbol whose cumulative range contains `target`.
    fn find(&self, target: u64) -> usize {
        // first index with cum > target, minus one
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

fn narrow(low: u64, high: u64, lo: u64, hi: u64, total: u64) -> (u64, u64) {
    let range = (high - low) as u128 + 1;
    let new_high = low + (range * hi as u128 / total as u128) as u64 - 1;
    let new_low = low + (range * lo as u128 / total as u128) as u64;
    (new_low, new_high)
}

struct Encoder {
    low: u64,
    high: u64,
    pending: usize,
    bits: Vec<bool>,
}

impl Encoder {
    fn new() -> Self {
        Encoder {
            low: 0,
            high: TOP,
            pending: 0,
            bits: Vec::new(),
        }
    }

    fn emit(&mut self, bit: bool) {
        self.bits.push(bit);
        let n = std::mem::take(&mut self.pending);
        self.bits.extend(std::iter::repeat_n(!bit, n));
    }

    fn encode(&mut self, model: &CodingModel, sym: usize) {
        let (lo, hi) = model.bounds(sym);
        (self.low, self.high) = narrow(self.low, self.high, lo, hi, model.total());
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    fn finish(mut self) -> Vec<bool> {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
        self.bits
    }
}

struct Decoder<'a> {
    low: u64,
    high: u64,
    value: u64,
    bits: &'a [bool],
    pos: usize,
    // bits the mirrored encoder would have committed so far
    committed: usize,
    pending: usize,
}

impl<'a> Decoder<'a> {
    fn new(bits: &'a [bool]) -> Self {
        let mut d = Decoder {
            low: 0,
            high: TOP,
            value: 0,
            bits,
            pos: 0,
            committed: 0,
            pending: 0,
        };
        for _ in 0..CODE_BITS {
            d.value = (d.value << 1) | d.next_bit();
        }
        d
    }

    fn next_bit(&mut self) -> u64 {
        let bit = self.bits.get(self.pos).copied().unwrap_or(false);
        self.pos += 1;
        bit as u64
    }

    fn decode(&mut self, model: &CodingModel) -> usize {
        let total = model.total() as u128;
        let range = (self.high - self.low) as u128 + 1;
        let target = (((self.value - self.low) as u128 + 1) * total - 1) / range;
        let sym = model.find(target as u64);
        let (lo, hi) = model.bounds(sym);
        (self.low, self.high) = narrow(self.low, self.high, lo, hi, model.total());
        loop {
            if self.high < HALF {
                self.committed += 1 + std::mem::take(&mut self.pending);
            } else if self.low >= HALF {
                self.committed += 1 + std::mem::take(&mut self.pending);
                self.low -= HALF;
                self.high -= HALF;
                self.value -= HALF;
            } else if self.low >= QUARTER && self.high < THREE_QUARTERS {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = (self.value << 1) | self.next_bit();
        }
        sym
    }
}

fn rank_symbol(model: &CodingModel, rank: u32) -> Result<usize> {
    if rank == 0 || rank as usize > model.ranks {
        return Err(Error::RankOutOfRange {
            rank,
            vocab: model.ranks,
        });
    }
    Ok(rank as usize - 1)
}

/// Arithmetic-encodes `ranks` plus the end symbol under `table`.
pub fn encode_bits(ranks: &[u32], table: &RankFrequencyTable) -> Result<Vec<bool>> {
    let model = CodingModel::new(table, true)?;
    let mut enc = Encoder::new();
    for &r in ranks {
        enc.encode(&model, rank_symbol(&model, r)?);
    }
    enc.encode(&model, model.eos_symbol().unwrap());
    Ok(enc.finish())
}

/// Decodes ranks under `table` up to the end symbol.
pub fn decode_bits(bits: &[bool], table: &RankFrequencyTable) -> Result<Vec<u32>> {
    let model = CodingModel::new(table, true)?;
    let eos = model.eos_symbol().unwrap();
    let mut dec = Decoder::new(bits);
    let mut out = Vec::new();
    loop {
        let sym = dec.decode(&model);
        if sym == eos {
            return Ok(out);
        }
        out.push(sym as u32 + 1);
        // a well-formed stream ends before the window runs past its last bit
        if dec.pos > bits.len() + CODE_BITS as usize + 2 {
            return Err(Error::Format(
                "rank stream has no end-of-stream symbol".into(),
            ));
        }
    }
}

fn dst_model(table: &RankFrequencyTable) -> Result<CodingModel> {
    let model = CodingModel::new(table, false)?;
    if model.symbols() < 2 {
        return Err(Error::InvalidTable(
            "destination table needs at least two ranks".into(),
        ));
    }
    Ok(model)
}

/// Re-expresses `src_ranks` (distributed like `src_table`) as ranks
/// distributed like `dst_table`.
pub fn arithmetic_recode(
    src_ranks: &[u32],
    src_table: &RankFrequencyTable,
    dst_table: &RankFrequencyTable,
) -> Result<Vec<u32>> {
    let mut bits = encode_bits(src_ranks, src_table)?;
    let model = dst_model(dst_table)?;
    let m = bits.len();
    // Decode the midpoint of the dyadic interval of `bits`, not its lower
    // end: a value sitting exactly on an interval boundary can straddle the
    // coder midpoint forever without committing a bit.
    bits.push(true);
    let mut dec = Decoder::new(&bits);
    let mut out = Vec::new();
    while dec.committed < m {
        out.push(dec.decode(&model) as u32 + 1);
    }
    Ok(out)
}

/// Inverse of [`arithmetic_recode`].
pub fn arithmetic_unrecode(
    dst_ranks: &[u32],
    src_table: &RankFrequencyTable,
    dst_table: &RankFrequencyTable,
) -> Result<Vec<u32>> {
    let model = dst_model(dst_table)?;
    let mut enc = Encoder::new();
    for &r in dst_ranks {
        enc.encode(&model, rank_symbol(&model, r)?);
    }
    decode_bits(&enc.finish(), src_table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_roundtrip() {
        let t = RankFrequencyTable::from_counts(vec![50, 20, 10, 5, 1]);
        for ranks in [vec![], vec![1], vec![5, 5, 5, 1, 2, 3, 4], vec![1; 100]] {
            let bits = encode_bits(&ranks, &t).unwrap();
            assert_eq!(decode_bits(&bits, &t).unwrap(), ranks);
        }
    }

    #[test]
    fn recode_identical_tables() {
        let t = RankFrequencyTable::from_counts(vec![7, 3, 2, 1]);
        let src = vec![1, 1, 2, 4, 3, 1, 1, 1, 2];
        let dst = arithmetic_recode(&src, &t, &t).unwrap();
        assert_eq!(arithmetic_unrecode(&dst, &t, &t).unwrap(), src);
    }

    #[test]
    fn four_into_two_doubles_length() {
        let src_t = RankFrequencyTable::uniform(4, 1 << 20);
        let dst_t = RankFrequencyTable::uniform(2, 1);
        let src: Vec<u32> = (0..400).map(|i| (i * 7 % 4) as u32 + 1).collect();
        let dst = arithmetic_recode(&src, &src_t, &dst_t).unwrap();
        // each rank costs 2 bits; the end symbol adds log2(total) ~ 22 bits
        let eos_bits = ((4u64 << 20) + 1).ilog2() as usize + 1;
        assert!(dst.len() >= 2 * src.len(), "{}", dst.len());
        assert!(dst.len() <= 2 * src.len() + eos_bits + 3, "{}", dst.len());
        assert_eq!(arithmetic_unrecode(&dst, &src_t, &dst_t).unwrap(), src);
    }

    #[test]
    fn rejects_bad_tables_and_ranks() {
        let ok = RankFrequencyTable::uniform(3, 1);
        let zero = RankFrequencyTable::from_counts(vec![1, 0, 1]);
        assert!(matches!(
            encode_bits(&[1], &zero),
            Err(Error::InvalidTable(_))
        ));
        assert!(matches!(
            arithmetic_recode(&[1], &ok, &RankFrequencyTable::uniform(1, 5)),
            Err(Error::InvalidTable(_))
        ));
        assert!(matches!(
            encode_bits(&[4], &ok),
            Err(Error::RankOutOfRange { .. })
        ));
        let huge = RankFrequencyTable::from_counts(vec![MAX_TOTAL, 1]);
        assert!(encode_bits(&[1], &huge).is_err());
    }
}
