use thiserror::Error;

use crate::model::ModelFingerprint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("text not representable in the model vocabulary at char {position} ({ch:?})")]
    Encoding { position: usize, ch: char },

    #[error("model fingerprint mismatch: expected {expected}, loaded model is {found}")]
    FingerprintMismatch {
        expected: ModelFingerprint,
        found: ModelFingerprint,
    },

    #[error("context of {needed} tokens exceeds the model window of {window}")]
    ContextOverflow { needed: usize, window: usize },

    #[error("backend returned different rankings for the same probe context")]
    NondeterminismDetected,

    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    #[error("rank {rank} out of range for vocabulary of {vocab} (bridge the rank stream first)")]
    RankOutOfRange { rank: u32, vocab: usize },

    #[error("stegotext does not re-tokenize to the emitted tokens (first difference at token {position})")]
    RetokenizationUnstable { position: usize },

    #[error("stegotext has {found} tokens, fewer than the {pad_len} padding tokens of the key")]
    PaddingUnderflow { found: usize, pad_len: usize },

    #[error("key requests a begin-of-sequence token but the model has none")]
    BosUnavailable,

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("cannot bridge vocabulary of {v_enc} into {v_dec}")]
    Unbridgeable { v_enc: usize, v_dec: usize },

    #[error(
        "encoder rank {rank} falls in the ambiguous band {lo}..={hi} of the digit-block scheme"
    )]
    RemapAmbiguity { rank: u32, lo: u32, hi: u32 },

    #[error("rank stream ends in the middle of a two-rank code")]
    TruncatedCode,

    #[error("malformed digit rank {rank} at stream position {position}")]
    MalformedDigit { rank: u32, position: usize },

    #[error("invalid rank table: {0}")]
    InvalidTable(String),

    #[error("length mismatch: item {index} has {found} tokens, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
