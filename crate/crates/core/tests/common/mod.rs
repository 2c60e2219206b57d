#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rankstego::{corpus, ReferenceModel, Token};

/// Brute-force bigram recount, independent of the library's tables.
pub struct Oracle {
    pairs: Vec<(u8, u8)>,
    bytes: Vec<u8>,
    smoothing: f64,
    rows: RefCell<HashMap<Option<u8>, Vec<f64>>>,
}

impl Oracle {
    pub fn new(corpus: &str, smoothing: f64) -> Self {
        let bytes = corpus.as_bytes().to_vec();
        let pairs = bytes.windows(2).map(|w| (w[0], w[1])).collect();
        Oracle {
            pairs,
            bytes,
            smoothing,
            rows: RefCell::default(),
        }
    }

    fn counts(&self, prev: Option<u8>) -> Vec<u64> {
        let mut counts = vec![0u64; 256];
        match prev {
            Some(a) => {
                for &(x, y) in &self.pairs {
                    if x == a {
                        counts[y as usize] += 1;
                    }
                }
            }
            None => {
                for &b in &self.bytes {
                    counts[b as usize] += 1;
                }
            }
        }
        counts
    }

    /// Probabilities of all 256 successors of `prev`.
    pub fn probs(&self, prev: Option<u8>) -> Vec<f64> {
        if let Some(row) = self.rows.borrow().get(&prev) {
            return row.clone();
        }
        let counts = self.counts(prev);
        let row: u64 = counts.iter().sum();
        let denom = row as f64 + 256.0 * self.smoothing;
        let row: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 + self.smoothing) / denom)
            .collect();
        self.rows.borrow_mut().insert(prev, row.clone());
        row
    }

    /// 1-based rank of `next` after `prev`: how many tokens beat it, plus one.
    pub fn rank(&self, prev: Option<u8>, next: u8) -> u32 {
        let p = self.probs(prev);
        let mine = p[next as usize];
        let better = (0..256usize)
            .filter(|&t| p[t] > mine || (p[t] == mine && t < next as usize))
            .count();
        better as u32 + 1
    }

    pub fn ranks(&self, tokens: &[Token], context: &[Token]) -> Vec<u32> {
        let mut prev = context.last().map(|t| t.0 as u8);
        tokens
            .iter()
            .map(|t| {
                let r = self.rank(prev, t.0 as u8);
                prev = Some(t.0 as u8);
                r
            })
            .collect()
    }

    pub fn log_prob(&self, tokens: &[Token], context: &[Token]) -> f64 {
        let mut prev = context.last().map(|t| t.0 as u8);
        let mut total = 0.0;
        for t in tokens {
            total += self.probs(prev)[t.0 as usize].ln();
            prev = Some(t.0 as u8);
        }
        total
    }
}

pub fn english() -> ReferenceModel {
    ReferenceModel::build(corpus::TEXT, 1.0).unwrap()
}

pub fn printable(rng: &mut impl Rng, len: usize) -> String {
    (0..len)
        .map(|_| rng.gen_range(0x20u8..=0x7e) as char)
        .collect()
}

/// Short ASCII text from a small alphabet, so counts collide and ranks tie.
pub fn small_alphabet(rng: &mut impl Rng, len: usize) -> String {
    const ALPHABET: &[u8] = b"abcde .";
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

/// Random plaintext of at most `max` bytes: a corpus excerpt, printable
/// noise, word salad, or a mix with whitespace and high tokens.
pub fn plaintext(rng: &mut impl Rng, max: usize) -> String {
    let len = rng.gen_range(0..=max);
    let text = match rng.gen_range(0..4) {
        0 => {
            let passages = corpus::passages();
            let p = passages[rng.gen_range(0..passages.len())];
            let start = rng.gen_range(0..p.len());
            p[start..].to_string()
        }
        1 => printable(rng, len),
        2 => {
            let words = corpus::words();
            let mut s = String::new();
            while s.len() < len {
                s.push_str(words[rng.gen_range(0..words.len())]);
                s.push(' ');
            }
            s
        }
        _ => (0..len)
            .map(|_| match rng.gen_range(0..10) {
                0 => '\n',
                1 => '\t',
                2 => char::from_u32(rng.gen_range(0x100..0x180)).unwrap(),
                _ => rng.gen_range(0x20u8..=0x7e) as char,
            })
            .collect(),
    };
    let mut out = String::new();
    for ch in text.chars() {
        if out.len() + ch.len_utf8() > len {
            break;
        }
        out.push(ch);
    }
    out
}

/// Sorted-data percentile by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() as f64 - 1.0);
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
