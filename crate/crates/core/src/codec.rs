//! Rank-stream steganography.
//!
//! The message is turned into the ranks its tokens have under the model
//! (after `k'`), and the stegotext is generated after `k` by picking the
//! token at each of those ranks. Decoding runs the two halves in reverse.

use crate::error::{Error, Result};
use crate::key::StegoKey;
use crate::model::{check_window, LanguageModel, ModelFingerprint, Token};

/// 1-based ranks of a message, tagged with the model that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankSequence {
    pub ranks: Vec<u32>,
    pub source_fingerprint: ModelFingerprint,
}

impl RankSequence {
    pub fn new(ranks: Vec<u32>, source_fingerprint: ModelFingerprint) -> Self {
        RankSequence {
            ranks,
            source_fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        self.ranks.iter().map(|&r| r as f64).sum::<f64>() / self.ranks.len() as f64
    }
}

/// A generated cover text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StegoText {
    pub text: String,
    pub tokens: Vec<Token>,
    /// Fingerprint of the model the key is bound to.
    pub fingerprint: ModelFingerprint,
}

impl StegoText {
    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    /// Wraps received text; tokens are recovered with the model tokenizer.
    pub fn from_text(model: &dyn LanguageModel, text: &str) -> Result<Self> {
        Ok(StegoText {
            text: text.to_string(),
            tokens: model.tokenize(text)?,
            fingerprint: model.fingerprint(),
        })
    }

    /// Wraps received token ids; the text is a best-effort rendering.
    pub fn from_tokens(model: &dyn LanguageModel, tokens: Vec<Token>) -> Self {
        StegoText {
            text: model.detokenize(&tokens).unwrap_or_default(),
            tokens,
            fingerprint: model.fingerprint(),
        }
    }

    /// Token-transport file body: one decimal id per line.
    pub fn token_lines(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn parse_token_lines(body: &str) -> Result<Vec<Token>> {
        body.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.parse::<u32>()
                    .map(Token)
                    .map_err(|_| Error::Format(format!("line {}: not a token id: {l:?}", i + 1)))
            })
            .collect()
    }
}

fn check_vocab(model: &dyn LanguageModel, tokens: &[Token]) -> Result<()> {
    let vocab = model.vocab_size();
    match tokens.iter().find(|t| t.index() >= vocab) {
        Some(t) => Err(Error::TokenOutOfRange { token: t.0, vocab }),
        None => Ok(()),
    }
}

/// Rank of every message token given the context and the preceding tokens.
pub fn extract_ranks(
    model: &dyn LanguageModel,
    message: &[Token],
    context: &[Token],
) -> Result<RankSequence> {
    check_window(model.context_window(), context.len() + message.len())?;
    check_vocab(model, message)?;
    let mut ctx = context.to_vec();
    ctx.reserve(message.len());
    let mut ranks = Vec::with_capacity(message.len());
    for &tok in message {
        ranks.push(model.next_ranking(&ctx)?.rank_of(tok)?);
        ctx.push(tok);
    }
    Ok(RankSequence::new(ranks, model.fingerprint()))
}

/// Autoregressive generation after `context`, taking the token at each
/// prescribed rank instead of sampling.
pub fn emit_by_ranks(
    model: &dyn LanguageModel,
    ranks: &[u32],
    context: &[Token],
) -> Result<Vec<Token>> {
    let vocab = model.vocab_size();
    if let Some(&rank) = ranks.iter().find(|&&r| r == 0 || r as usize > vocab) {
        return Err(Error::RankOutOfRange { rank, vocab });
    }
    check_window(model.context_window(), context.len() + ranks.len())?;
    let mut ctx = context.to_vec();
    ctx.reserve(ranks.len());
    for &rank in ranks {
        let tok = model.next_ranking(&ctx)?.token_at_rank(rank)?;
        ctx.push(tok);
    }
    Ok(ctx.split_off(context.len()))
}

/// Extends the message with `pad_len` greedy tokens.
pub fn pad_message(
    model: &dyn LanguageModel,
    message: &[Token],
    context: &[Token],
    pad_len: usize,
) -> Result<Vec<Token>> {
    check_window(
        model.context_window(),
        context.len() + message.len() + pad_len,
    )?;
    let mut ctx: Vec<Token> = context.iter().chain(message).copied().collect();
    for _ in 0..pad_len {
        let tok = model.next_ranking(&ctx)?.argmax();
        ctx.push(tok);
    }
    Ok(ctx.split_off(context.len()))
}

/// `n` steps of plain greedy decoding.
pub fn greedy_continuation(
    model: &dyn LanguageModel,
    context: &[Token],
    n: usize,
) -> Result<Vec<Token>> {
    pad_message(model, &[], context, n)
}

/// Hides `message` under `key`, returning the stegotext and the rank stream
/// it carries.
pub fn encode_tokens(
    model: &dyn LanguageModel,
    message: &[Token],
    key: &StegoKey,
) -> Result<(StegoText, RankSequence)> {
    key.validate()?;
    key.check_model(model)?;
    let message_ctx = key.message_context(model)?;
    let stego_ctx = key.stego_context(model)?;
    let padded = pad_message(model, message, &message_ctx, key.pad_len)?;
    let ranks = extract_ranks(model, &padded, &message_ctx)?;
    let tokens = emit_by_ranks(model, &ranks.ranks, &stego_ctx)?;

    let text = if key.token_transport {
        model.detokenize(&tokens).unwrap_or_default()
    } else {
        let text = model.detokenize(&tokens)?;
        let retok = model.tokenize(&text)?;
        if retok != tokens {
            let position = retok
                .iter()
                .zip(&tokens)
                .position(|(a, b)| a != b)
                .unwrap_or(retok.len().min(tokens.len()));
            return Err(Error::RetokenizationUnstable { position });
        }
        text
    };
    let stego = StegoText {
        text,
        tokens,
        fingerprint: key.fingerprint,
    };
    Ok((stego, ranks))
}

pub fn encode(model: &dyn LanguageModel, plaintext: &str, key: &StegoKey) -> Result<StegoText> {
    let message = model.tokenize(plaintext)?;
    encode_tokens(model, &message, key).map(|(s, _)| s)
}

/// Recovers the hidden tokens (padding stripped).
pub fn decode_tokens(
    model: &dyn LanguageModel,
    stego: &StegoText,
    key: &StegoKey,
) -> Result<Vec<Token>> {
    key.validate()?;
    key.check_model(model)?;
    let stego_tokens = if key.token_transport {
        stego.tokens.clone()
    } else {
        model.tokenize(&stego.text)?
    };
    if stego_tokens.len() < key.pad_len {
        return Err(Error::PaddingUnderflow {
            found: stego_tokens.len(),
            pad_len: key.pad_len,
        });
    }
    let stego_ctx = key.stego_context(model)?;
    let message_ctx = key.message_context(model)?;
    let ranks = extract_ranks(model, &stego_tokens, &stego_ctx)?;
    let mut message = emit_by_ranks(model, &ranks.ranks, &message_ctx)?;
    message.truncate(message.len() - key.pad_len);
    Ok(message)
}

pub fn decode(model: &dyn LanguageModel, stego: &StegoText, key: &StegoKey) -> Result<String> {
    let tokens = decode_tokens(model, stego, key)?;
    model.detokenize(&tokens)
}
