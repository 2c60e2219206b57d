//! The deterministic autoregressive model contract.
//!
//! Everything above this module only ever sees a [`LanguageModel`]: a
//! tokenizer pair plus a next-token distribution for a context. The codec
//! never looks at probabilities directly, only at the [`NextTokenRanking`]
//! derived from them, so the one thing a backend must get right is a
//! reproducible ordering.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A token id in `[0, V)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub fn id(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for Token {
    fn from(id: u32) -> Self {
        Token(id)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Digest identifying a model build: weights plus backend configuration.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelFingerprint(pub [u8; 32]);

impl ModelFingerprint {
    /// `SHA-256(SHA-256(weights) || config)`.
    pub fn from_parts(weights_digest: [u8; 32], config: &str) -> Self {
        let mut h = Sha256::new();
        h.update(weights_digest);
        h.update(config.as_bytes());
        ModelFingerprint(h.finalize().into())
    }

    pub fn from_bytes(weights: &[u8], config: &str) -> Self {
        Self::from_parts(Sha256::digest(weights).into(), config)
    }

    /// Streams the weight file through the hash, so multi-gigabyte files
    /// are never held in memory.
    pub fn from_file(path: &Path, config: &str) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut h = Sha256::new();
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
        Ok(Self::from_parts(h.finalize().into(), config))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| Error::Format(format!("bad fingerprint hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Format("fingerprint must be 32 bytes".into()))?;
        Ok(ModelFingerprint(arr))
    }
}

impl fmt::Display for ModelFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ModelFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelFingerprint({})", &self.to_hex()[..16])
    }
}

impl Serialize for ModelFingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ModelFingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ModelFingerprint::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Tokens tagged with the model that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub fingerprint: ModelFingerprint,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Token>, fingerprint: ModelFingerprint) -> Self {
        TokenSequence {
            tokens,
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.tokens
    }

    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.0).collect()
    }
}

/// The vocabulary sorted by descending probability for one decoding step.
///
/// Ties are broken by ascending token id, so the ordering is a strict total
/// order and [`rank_of`](Self::rank_of) / [`token_at_rank`](Self::token_at_rank)
/// are exact inverses. Ranks are 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct NextTokenRanking {
    ordering: Vec<u32>,
    // position of each token in `ordering`, 0-based
    position: Vec<u32>,
    probs: Vec<f64>,
}

impl NextTokenRanking {
    /// Sorts by probability (descending) then id (ascending).
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let mut ordering: Vec<u32> = (0..probs.len() as u32).collect();
        ordering.sort_by(|&a, &b| {
            probs[b as usize]
                .total_cmp(&probs[a as usize])
                .then(a.cmp(&b))
        });
        Self::from_parts(ordering, probs)
    }

    /// Softmax in double precision with the max subtracted first.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        Self::from_probs(probs)
    }

    /// Builds a ranking from an ordering the caller has already sorted with
    /// the tie-break rule.
    pub(crate) fn from_parts(ordering: Vec<u32>, probs: Vec<f64>) -> Self {
        let mut position = vec![0u32; ordering.len()];
        for (pos, &tok) in ordering.iter().enumerate() {
            position[tok as usize] = pos as u32;
        }
        NextTokenRanking {
            ordering,
            position,
            probs,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.ordering.len()
    }

    pub fn ordering(&self) -> &[u32] {
        &self.ordering
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs[token.index()]
    }

    /// 1-based rank of `token`.
    pub fn rank_of(&self, token: Token) -> Result<u32> {
        match self.position.get(token.index()) {
            Some(&pos) => Ok(pos + 1),
            None => Err(Error::TokenOutOfRange {
                token: token.0,
                vocab: self.vocab_size(),
            }),
        }
    }

    /// Token at 1-based `rank`.
    pub fn token_at_rank(&self, rank: u32) -> Result<Token> {
        if rank == 0 || rank as usize > self.ordering.len() {
            return Err(Error::RankOutOfRange {
                rank,
                vocab: self.vocab_size(),
            });
        }
        Ok(Token(self.ordering[rank as usize - 1]))
    }

    pub fn argmax(&self) -> Token {
        Token(self.ordering[0])
    }

    /// Checks the ranking invariants: permutation, normalisation within
    /// `1e-6`, and the probability/tie-break order.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let v = self.ordering.len();
        if self.probs.len() != v {
            return Err(format!("{} probs for {} tokens", self.probs.len(), v));
        }
        let mut seen = vec![false; v];
        for &t in &self.ordering {
            let t = t as usize;
            if t >= v || seen[t] {
                return Err(format!("ordering is not a permutation (token {t})"));
            }
            seen[t] = true;
        }
        let sum: f64 = self.probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(format!("probabilities sum to {sum}"));
        }
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(format!("probability {p} outside [0, 1]"));
        }
        for w in self.ordering.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (pa, pb) = (self.probs[a as usize], self.probs[b as usize]);
            if !(pa > pb || (pa == pb && a < b)) {
                return Err(format!("tokens {a} and {b} out of order"));
            }
        }
        Ok(())
    }

    /// SHA-256 over the ordering and the probability bit patterns.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for &t in &self.ordering {
            h.update(t.to_le_bytes());
        }
        for p in &self.probs {
            h.update(p.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }
}

/// A deterministic autoregressive model with full next-token access.
///
/// Implementations must return bit-identical rankings for equal contexts.
/// A model handle is used by one caller at a time.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    fn context_window(&self) -> usize;

    fn fingerprint(&self) -> ModelFingerprint;

    fn bos_token(&self) -> Option<Token> {
        None
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>>;

    fn detokenize(&self, tokens: &[Token]) -> Result<String>;

    /// Raw next-token logits for `context`, one per vocabulary entry.
    /// Backends computing in single precision widen losslessly.
    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>>;

    fn next_ranking(&self, context: &[Token]) -> Result<Arc<NextTokenRanking>> {
        check_window(self.context_window(), context.len())?;
        let logits = self.next_logits(context)?;
        if logits.len() != self.vocab_size() {
            return Err(Error::BackendUnavailable(format!(
                "backend returned {} logits for a vocabulary of {}",
                logits.len(),
                self.vocab_size()
            )));
        }
        Ok(Arc::new(NextTokenRanking::from_logits(&logits)))
    }
}

pub(crate) fn check_window(window: usize, needed: usize) -> Result<()> {
    if needed > window {
        Err(Error::ContextOverflow { needed, window })
    } else {
        Ok(())
    }
}

/// Tokenizes `text` and tags the tokens with the model fingerprint.
pub fn tokenize(model: &dyn LanguageModel, text: &str) -> Result<TokenSequence> {
    Ok(TokenSequence::new(
        model.tokenize(text)?,
        model.fingerprint(),
    ))
}

/// Inverse of [`tokenize`]; refuses sequences produced by another model.
pub fn detokenize(model: &dyn LanguageModel, seq: &TokenSequence) -> Result<String> {
    let found = model.fingerprint();
    if seq.fingerprint != found {
        return Err(Error::FingerprintMismatch {
            expected: seq.fingerprint,
            found,
        });
    }
    model.detokenize(&seq.tokens)
}

const PROBE_TEXT: &str = "The quick brown fox jumps over the lazy dog.";

fn probe_context(model: &dyn LanguageModel) -> Vec<Token> {
    let mut ctx = model.tokenize(PROBE_TEXT).unwrap_or_default();
    if ctx.is_empty() {
        ctx.push(Token(0));
    }
    ctx.truncate(model.context_window().max(1));
    ctx
}

/// Evaluates a fixed probe context `repeats` times and returns the ranking
/// digest, or [`Error::NondeterminismDetected`] if any two runs differ.
pub fn probe_determinism(model: &dyn LanguageModel, repeats: usize) -> Result<[u8; 32]> {
    let ctx = probe_context(model);
    let first = model.next_ranking(&ctx)?.digest();
    for _ in 1..repeats.max(2) {
        if model.next_ranking(&ctx)?.digest() != first {
            return Err(Error::NondeterminismDetected);
        }
    }
    Ok(first)
}

/// Session-start check: the probe context evaluated twice must agree.
pub fn verify_determinism(model: &dyn LanguageModel) -> Result<()> {
    probe_determinism(model, 2).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_ties_break_by_id() {
        let r = NextTokenRanking::from_probs(vec![0.25; 4]);
        assert_eq!(r.ordering(), &[0, 1, 2, 3]);
        assert_eq!(r.rank_of(Token(0)).unwrap(), 1);
        assert_eq!(r.token_at_rank(4).unwrap(), Token(3));
        r.validate().unwrap();
    }

    #[test]
    fn ranking_from_logits_is_stable_for_large_values() {
        let r = NextTokenRanking::from_logits(&[1000.0, 999.0, 1000.0, -5.0]);
        assert_eq!(r.ordering(), &[0, 2, 1, 3]);
        r.validate().unwrap();
        assert!((r.prob(Token(0)) - r.prob(Token(2))).abs() == 0.0);
    }

    #[test]
    fn rank_bounds() {
        let r = NextTokenRanking::from_probs(vec![0.5, 0.3, 0.2]);
        assert!(matches!(
            r.token_at_rank(0),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            r.token_at_rank(4),
            Err(Error::RankOutOfRange { rank: 4, vocab: 3 })
        ));
        assert!(matches!(
            r.rank_of(Token(3)),
            Err(Error::TokenOutOfRange { .. })
        ));
        for k in 1..=3 {
            assert_eq!(r.rank_of(r.token_at_rank(k).unwrap()).unwrap(), k);
        }
    }

    #[test]
    fn validate_rejects_bad_order() {
        let r = NextTokenRanking::from_parts(vec![1, 0], vec![0.6, 0.4]);
        assert!(r.validate().is_err());
    }

    #[test]
    fn fingerprint_hex_roundtrip() {
        let fp = ModelFingerprint::from_bytes(b"weights", "cfg");
        assert_eq!(ModelFingerprint::from_hex(&fp.to_hex()).unwrap(), fp);
        assert_ne!(fp, ModelFingerprint::from_bytes(b"weights", "cfg2"));
        assert_ne!(fp, ModelFingerprint::from_bytes(b"weightz", "cfg"));
        assert!(ModelFingerprint::from_hex("abcd").is_err());
    }

    #[test]
    fn fingerprint_from_file_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        std::fs::write(&path, b"some weights").unwrap();
        let a = ModelFingerprint::from_file(&path, "x").unwrap();
        let b = ModelFingerprint::from_file(&path, "x").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, ModelFingerprint::from_bytes(b"some weights", "x"));
    }
}
