//! Canonical Huffman coding of 16-bit symbol streams.

pub mod bits;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::error::{Error, Result};

pub use bits::{pack_fixed, unpack_fixed, BitReader, BitStream, BitWriter};

pub const MAX_CODE_LEN: u8 = 64;

/// Occurrence counts per symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolHistogram {
    counts: BTreeMap<u16, u64>,
}

impl SymbolHistogram {
    pub fn counts(&self) -> &BTreeMap<u16, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn symbols(&self) -> usize {
        self.counts.len()
    }

    /// Shannon entropy in bits per symbol.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.total() as f64;
        self.counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum()
    }

    /// Share of the total carried by the `n` most frequent symbols.
    pub fn top_mass(&self, n: usize) -> f64 {
        let mut c: Vec<u64> = self.counts.values().copied().collect();
        c.sort_unstable_by(|a, b| b.cmp(a));
        c.iter().take(n).sum::<u64>() as f64 / self.total() as f64
    }
}

pub fn build_histogram(symbols: &[u16]) -> Result<SymbolHistogram> {
    if symbols.is_empty() {
        return Err(Error::Argument("histogram of an empty stream".into()));
    }
    let mut counts = BTreeMap::new();
    for &s in symbols {
        *counts.entry(s).or_insert(0u64) += 1;
    }
    Ok(SymbolHistogram { counts })
}

/// Prefix code fully determined by per-symbol lengths; codewords are assigned in
/// `(length, symbol)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalCode {
    /// Code length per symbol value; zero means the symbol is absent.
    lengths: Vec<u8>,
    codewords: Vec<u64>,
    /// Symbols sorted by `(length, symbol)`.
    sorted: Vec<u16>,
    /// Number of codewords of each length.
    per_length: Vec<u64>,
}

impl CanonicalCode {
    /// Rebuilds the code from a length table (index = symbol).
    pub fn from_lengths(lengths: Vec<u8>) -> Result<Self> {
        if lengths.len() > 1 << 16 {
            return Err(Error::Coding(format!("{} table slots exceed the 16-bit alphabet", lengths.len())));
        }
        if let Some(l) = lengths.iter().find(|l| **l > MAX_CODE_LEN) {
            return Err(Error::Coding(format!("code length {l} exceeds {MAX_CODE_LEN}")));
        }
        let mut sorted: Vec<u16> = (0..lengths.len())
            .filter(|&s| lengths[s] > 0)
            .map(|s| s as u16)
            .collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));

        let mut per_length = vec![0u64; MAX_CODE_LEN as usize + 1];
        for &s in &sorted {
            per_length[lengths[s as usize] as usize] += 1;
        }
        // Kraft check in exact integer arithmetic, scaled by 2^64.
        let kraft: u128 = (1..=MAX_CODE_LEN as usize)
            .map(|l| per_length[l] as u128 * (1u128 << (64 - l)))
            .sum();
        let full = 1u128 << 64;
        if kraft > full {
            return Err(Error::Coding("code lengths violate the Kraft inequality".into()));
        }
        if sorted.len() >= 2 && kraft != full {
            return Err(Error::Coding("code lengths do not form a complete prefix code".into()));
        }

        let mut codewords = vec![0u64; lengths.len()];
        let mut code = 0u64;
        let mut prev_len = 0u8;
        for (i, &s) in sorted.iter().enumerate() {
            let len = lengths[s as usize];
            if i > 0 {
                code = (code + 1) << (len - prev_len);
            } else {
                code <<= len - prev_len;
            }
            codewords[s as usize] = code;
            prev_len = len;
        }
        Ok(Self {
            lengths,
            codewords,
            sorted,
            per_length,
        })
    }

    /// Length table with one slot per symbol value up to the largest present one.
    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn length(&self, symbol: u16) -> Option<u8> {
        match self.lengths.get(symbol as usize) {
            Some(&l) if l > 0 => Some(l),
            _ => None,
        }
    }

    pub fn codeword(&self, symbol: u16) -> Option<(u64, u8)> {
        self.length(symbol).map(|l| (self.codewords[symbol as usize], l))
    }

    pub fn symbol_count(&self) -> usize {
        self.sorted.len()
    }

    /// Total encoded bits for a histogram under this code.
    pub fn encoded_bits(&self, hist: &SymbolHistogram) -> Result<u64> {
        hist.counts
            .iter()
            .map(|(&s, &c)| {
                self.length(s)
                    .map(|l| l as u64 * c)
                    .ok_or_else(|| Error::Coding(format!("symbol {s} has no codeword")))
            })
            .sum()
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct HeapKey {
    count: u64,
    min_symbol: u16,
    node: usize,
}

/// Huffman-optimal code lengths, merging the two lightest subtrees first and breaking
/// ties by the smallest symbol they contain.
pub fn build_code(hist: &SymbolHistogram) -> Result<CanonicalCode> {
    let max_symbol = *hist
        .counts
        .keys()
        .next_back()
        .ok_or_else(|| Error::Argument("empty histogram".into()))?;
    let mut lengths = vec![0u8; max_symbol as usize + 1];
    if hist.counts.len() == 1 {
        lengths[max_symbol as usize] = 1;
        return CanonicalCode::from_lengths(lengths);
    }

    // parent[i] for every node; leaves come first in symbol order.
    let leaves: Vec<u16> = hist.counts.keys().copied().collect();
    let mut parent: Vec<usize> = vec![usize::MAX; leaves.len()];
    let mut heap = BinaryHeap::new();
    for (node, (&s, &c)) in hist.counts.iter().enumerate() {
        heap.push(Reverse(HeapKey {
            count: c,
            min_symbol: s,
            node,
        }));
    }
    while heap.len() > 1 {
        let Reverse(a) = heap.pop().expect("len > 1");
        let Reverse(b) = heap.pop().expect("len > 1");
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a.node] = node;
        parent[b.node] = node;
        heap.push(Reverse(HeapKey {
            count: a.count + b.count,
            min_symbol: a.min_symbol.min(b.min_symbol),
            node,
        }));
    }
    // Depth via parents: internal nodes are created after their children.
    let mut depth = vec![0u32; parent.len()];
    for node in (0..parent.len()).rev() {
        if parent[node] != usize::MAX {
            depth[node] = depth[parent[node]] + 1;
        }
    }
    for (leaf, &s) in leaves.iter().enumerate() {
        if depth[leaf] > MAX_CODE_LEN as u32 {
            return Err(Error::Coding(format!(
                "Huffman code length {} exceeds {MAX_CODE_LEN}",
                depth[leaf]
            )));
        }
        lengths[s as usize] = depth[leaf] as u8;
    }
    CanonicalCode::from_lengths(lengths)
}

pub fn encode(symbols: &[u16], code: &CanonicalCode) -> Result<BitStream> {
    let mut w = BitWriter::new();
    for (i, &s) in symbols.iter().enumerate() {
        let (cw, len) = code
            .codeword(s)
            .ok_or_else(|| Error::Coding(format!("symbol {s} at position {i} has no codeword")))?;
        w.push(cw, len);
    }
    Ok(w.finish())
}

/// Decodes exactly `count` symbols and requires the stream to end there.
pub fn decode(stream: &BitStream, code: &CanonicalCode, count: usize) -> Result<Vec<u16>> {
    let mut r = stream.reader();
    let mut out = Vec::with_capacity(count);
    if count > 0 && code.symbol_count() == 0 {
        return Err(Error::Corruption("symbols requested from an empty code".into()));
    }
    for i in 0..count {
        let mut cw = 0u64;
        let mut first = 0u64;
        let mut index = 0u64;
        let mut len = 0usize;
        loop {
            let bit = r.read_bit().ok_or_else(|| {
                Error::Corruption(format!("stream truncated while decoding symbol {i}"))
            })?;
            len += 1;
            if len > MAX_CODE_LEN as usize {
                return Err(Error::Corruption(format!("no codeword matches at symbol {i}")));
            }
            cw = (cw << 1) | bit as u64;
            let n = code.per_length[len];
            if cw.wrapping_sub(first) < n && cw >= first {
                out.push(code.sorted[(index + cw - first) as usize]);
                break;
            }
            index += n;
            first = (first + n) << 1;
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Corruption(format!(
            "{} surplus bits after {count} symbols",
            r.remaining()
        )));
    }
    Ok(out)
}

/// Fraction of fixed-width storage saved: `1 − encoded / (count · raw_bits)`.
pub fn measure_savings(raw_bits_per_symbol: u32, symbol_count: usize, stream: &BitStream) -> f64 {
    if symbol_count == 0 {
        return 0.0;
    }
    1.0 - stream.bit_count() as f64 / (symbol_count as f64 * raw_bits_per_symbol as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lengths_of(code: &CanonicalCode) -> Vec<(u16, u8)> {
        (0..code.lengths().len() as u16)
            .filter_map(|s| code.length(s).map(|l| (s, l)))
            .collect()
    }

    #[test]
    fn histogram_counts() {
        let h = build_histogram(&[0, 0, 1]).unwrap();
        assert_eq!(h.counts().iter().map(|(a, b)| (*a, *b)).collect::<Vec<_>>(), vec![(0, 2), (1, 1)]);
        assert_eq!(build_histogram(&[4; 9]).unwrap().symbols(), 1);
        assert!(build_histogram(&[]).is_err());
    }

    #[test]
    fn skewed_four_symbol_code() {
        let syms: Vec<u16> = [vec![0u16; 5], vec![1; 2], vec![2], vec![3]].concat();
        let h = build_histogram(&syms).unwrap();
        let code = build_code(&h).unwrap();
        assert_eq!(lengths_of(&code), vec![(0, 1), (1, 2), (2, 3), (3, 3)]);
        assert_eq!(code.encoded_bits(&h).unwrap(), 15);
        // canonical assignment
        assert_eq!(code.codeword(0), Some((0b0, 1)));
        assert_eq!(code.codeword(1), Some((0b10, 2)));
        assert_eq!(code.codeword(2), Some((0b110, 3)));
        assert_eq!(code.codeword(3), Some((0b111, 3)));
    }

    #[test]
    fn equal_counts_give_equal_lengths() {
        let h = build_histogram(&[0, 1, 2, 3, 3, 2, 1, 0]).unwrap();
        let code = build_code(&h).unwrap();
        assert!(lengths_of(&code).iter().all(|(_, l)| *l == 2));
    }

    #[test]
    fn single_symbol_uses_one_bit() {
        let syms = vec![9u16; 13];
        let code = build_code(&build_histogram(&syms).unwrap()).unwrap();
        let s = encode(&syms, &code).unwrap();
        assert_eq!(s.bit_count(), 13);
        assert_eq!(decode(&s, &code, 13).unwrap(), syms);
        assert!((measure_savings(5, 13, &s) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence() {
        let code = build_code(&build_histogram(&[1, 2]).unwrap()).unwrap();
        let s = encode(&[], &code).unwrap();
        assert_eq!(s.bit_count(), 0);
        assert!(decode(&s, &code, 0).unwrap().is_empty());
    }

    #[test]
    fn wrong_counts_are_errors() {
        let syms = vec![0u16, 1, 1, 2, 0, 1];
        let code = build_code(&build_histogram(&syms).unwrap()).unwrap();
        let s = encode(&syms, &code).unwrap();
        assert!(matches!(decode(&s, &code, 7), Err(Error::Corruption(_))));
        assert!(matches!(decode(&s, &code, 5), Err(Error::Corruption(_))));
        assert!(matches!(encode(&[5], &code), Err(Error::Coding(_))));
    }

    #[test]
    fn uniform_alphabet_saves_nothing() {
        let syms: Vec<u16> = (0..1024).map(|i| (i % 32) as u16).collect();
        let code = build_code(&build_histogram(&syms).unwrap()).unwrap();
        let s = encode(&syms, &code).unwrap();
        assert_eq!(measure_savings(5, syms.len(), &s), 0.0);
    }

    #[test]
    fn incomplete_tables_rejected() {
        assert!(CanonicalCode::from_lengths(vec![1, 2]).is_err());
        assert!(CanonicalCode::from_lengths(vec![1, 1, 1]).is_err());
        assert!(CanonicalCode::from_lengths(vec![0, 1]).is_ok());
    }
}
