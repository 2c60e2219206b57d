//! Byte-level bigram model used for testing without external weights.
//!
//! `p(b | a) = (count(a, b) + s) / (count(a, ·) + 256 s)`. The context
//! reduces to its last byte; an empty context falls back to unigram counts
//! with the same smoothing. Orderings are computed from the integer counts,
//! so they are exact on every platform.
//!
//! Token surface: ids `0..128` are the ASCII characters themselves, ids
//! `128..256` are the characters `U+0100..U+017F`. Every token is one
//! `char`, which makes tokenize/detokenize a bijection between token lists
//! and strings over this 256-character alphabet.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{check_window, LanguageModel, ModelFingerprint, NextTokenRanking, Token};

pub const VOCAB: usize = 256;
pub const MAGIC: &[u8; 4] = b"RSBG";
pub const FORMAT_VERSION: u32 = 1;
/// Backend configuration string folded into the fingerprint.
pub const CONFIG: &str = "reference-bigram";
pub const DEFAULT_CONTEXT_WINDOW: usize = 4096;

const HEADER_LEN: usize = 4 + 4 + 8;
const FILE_LEN: usize = HEADER_LEN + (VOCAB * VOCAB + VOCAB) * 8;
const HIGH_BASE: u32 = 0x100;

pub fn token_char(token: Token) -> Option<char> {
    match token.0 {
        id @ 0..=127 => char::from_u32(id),
        id @ 128..=255 => char::from_u32(HIGH_BASE + id - 128),
        _ => None,
    }
}

pub fn char_token(ch: char) -> Option<Token> {
    let c = ch as u32;
    match c {
        0..=127 => Some(Token(c)),
        0x100..=0x17F => Some(Token(c - HIGH_BASE + 128)),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceModel {
    smoothing: f64,
    // row-major: bigram[a * 256 + b] = count(a, b)
    bigram: Vec<u64>,
    unigram: Vec<u64>,
    window: usize,
    fingerprint: ModelFingerprint,
    // index 256 is the empty context
    rankings: Vec<Arc<NextTokenRanking>>,
}

impl ReferenceModel {
    /// Counts bigrams over the UTF-8 bytes of `corpus`.
    pub fn build(corpus: &str, smoothing: f64) -> Result<Self> {
        let bytes = corpus.as_bytes();
        let mut bigram = vec![0u64; VOCAB * VOCAB];
        let mut unigram = vec![0u64; VOCAB];
        for &b in bytes {
            unigram[b as usize] += 1;
        }
        for w in bytes.windows(2) {
            bigram[w[0] as usize * VOCAB + w[1] as usize] += 1;
        }
        Self::from_counts(bigram, unigram, smoothing)
    }

    pub fn uniform() -> Self {
        Self::build("", 1.0).expect("unit smoothing is valid")
    }

    fn from_counts(bigram: Vec<u64>, unigram: Vec<u64>, smoothing: f64) -> Result<Self> {
        if !(smoothing.is_finite() && smoothing > 0.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing must be a positive real, got {smoothing}"
            )));
        }
        let mut model = ReferenceModel {
            smoothing,
            bigram,
            unigram,
            window: DEFAULT_CONTEXT_WINDOW,
            fingerprint: ModelFingerprint([0; 32]),
            rankings: Vec::new(),
        };
        model.fingerprint = ModelFingerprint::from_bytes(&model.to_bytes(), CONFIG);
        model.rankings = (0..=VOCAB)
            .map(|ctx| Arc::new(model.compute_ranking(ctx)))
            .collect();
        Ok(model)
    }

    pub fn with_context_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn bigram_count(&self, prev: u8, next: u8) -> u64 {
        self.bigram[prev as usize * VOCAB + next as usize]
    }

    pub fn unigram_count(&self, b: u8) -> u64 {
        self.unigram[b as usize]
    }

    fn row(&self, ctx: usize) -> &[u64] {
        if ctx == VOCAB {
            &self.unigram
        } else {
            &self.bigram[ctx * VOCAB..(ctx + 1) * VOCAB]
        }
    }

    fn compute_ranking(&self, ctx: usize) -> NextTokenRanking {
        let row = self.row(ctx);
        let total: u64 = row.iter().sum();
        let denom = total as f64 + self.smoothing * VOCAB as f64;
        let probs: Vec<f64> = row
            .iter()
            .map(|&c| (c as f64 + self.smoothing) / denom)
            .collect();
        let mut ordering: Vec<u32> = (0..VOCAB as u32).collect();
        ordering.sort_by(|&a, &b| row[b as usize].cmp(&row[a as usize]).then(a.cmp(&b)));
        NextTokenRanking::from_parts(ordering, probs)
    }

    fn context_index(context: &[Token]) -> Result<usize> {
        match context.last() {
            None => Ok(VOCAB),
            Some(t) if t.index() < VOCAB => Ok(t.index()),
            Some(t) => Err(Error::TokenOutOfRange {
                token: t.0,
                vocab: VOCAB,
            }),
        }
    }

    /// Serialized form: `"RSBG"`, version (u32 LE), smoothing (f64 LE), the
    /// 256x256 bigram counts row-major, then the 256 unigram counts, all
    /// counts u64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FILE_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.smoothing.to_le_bytes());
        for c in self.bigram.iter().chain(&self.unigram) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format(
                "not a reference model file (bad magic)".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported reference model version {version}"
            )));
        }
        if bytes.len() != FILE_LEN {
            return Err(Error::Format(format!(
                "reference model file has {} bytes, expected {FILE_LEN}",
                bytes.len()
            )));
        }
        let smoothing = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let mut counts = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
        let bigram: Vec<u64> = counts.by_ref().take(VOCAB * VOCAB).collect();
        let unigram: Vec<u64> = counts.collect();
        Self::from_counts(bigram, unigram, smoothing)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl LanguageModel for ReferenceModel {
    fn vocab_size(&self) -> usize {
        VOCAB
    }

    fn context_window(&self) -> usize {
        self.window
    }

    fn fingerprint(&self) -> ModelFingerprint {
        self.fingerprint
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| char_token(ch).ok_or(Error::Encoding { position, ch }))
            .collect()
    }

    fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        tokens
            .iter()
            .map(|&t| {
                token_char(t).ok_or(Error::TokenOutOfRange {
                    token: t.0,
                    vocab: VOCAB,
                })
            })
            .collect()
    }

    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        Ok(self
            .next_ranking(context)?
            .probs()
            .iter()
            .map(|p| p.ln())
            .collect())
    }

    fn next_ranking(&self, context: &[Token]) -> Result<Arc<NextTokenRanking>> {
        check_window(self.window, context.len())?;
        Ok(self.rankings[Self::context_index(context)?].clone())
    }
}
