//! Stego keys and their on-disk form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LanguageModel, ModelFingerprint, Token};

pub const KEY_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_PAD_LEN: usize = 5;

/// Everything sender and receiver must share.
#[derive(Clone, PartialEq, Eq)]
pub struct StegoKey {
    /// Secret prompt steering the stegotext.
    pub k: String,
    /// Optional context the hidden message is ranked after.
    pub k_prime: Option<String>,
    /// Greedy padding tokens appended to the message.
    pub pad_len: usize,
    pub fingerprint: ModelFingerprint,
    /// Prepend the model's begin-of-sequence token to both contexts.
    pub bos_policy: bool,
    /// Ship raw token ids instead of text.
    pub token_transport: bool,
    pub allow_empty_k: bool,
}

// Keeps prompts out of logs and panic messages.
impl fmt::Debug for StegoKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StegoKey")
            .field("k", &"<redacted>")
            .field("k_prime", &self.k_prime.as_ref().map(|_| "<redacted>"))
            .field("pad_len", &self.pad_len)
            .field("fingerprint", &self.fingerprint)
            .field("bos_policy", &self.bos_policy)
            .field("token_transport", &self.token_transport)
            .finish()
    }
}

impl StegoKey {
    pub fn new(k: impl Into<String>, fingerprint: ModelFingerprint) -> Self {
        StegoKey {
            k: k.into(),
            k_prime: None,
            pad_len: DEFAULT_PAD_LEN,
            fingerprint,
            bos_policy: false,
            token_transport: false,
            allow_empty_k: false,
        }
    }

    pub fn with_k_prime(mut self, k_prime: impl Into<String>) -> Self {
        self.k_prime = Some(k_prime.into());
        self
    }

    pub fn with_pad_len(mut self, pad_len: usize) -> Self {
        self.pad_len = pad_len;
        self
    }

    pub fn with_bos(mut self, bos: bool) -> Self {
        self.bos_policy = bos;
        self
    }

    pub fn with_token_transport(mut self, on: bool) -> Self {
        self.token_transport = on;
        self
    }

    pub fn allowing_empty_k(mut self) -> Self {
        self.allow_empty_k = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() && !self.allow_empty_k {
            return Err(Error::InvalidKey(
                "secret prompt k is empty (set allow_empty_k to override)".into(),
            ));
        }
        Ok(())
    }

    pub fn check_model(&self, model: &dyn LanguageModel) -> Result<()> {
        let found = model.fingerprint();
        if self.fingerprint != found {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint,
                found,
            });
        }
        Ok(())
    }

    /// Context the stegotext is generated after.
    pub fn stego_context(&self, model: &dyn LanguageModel) -> Result<Vec<Token>> {
        build_context(model, Some(&self.k), self.bos_policy)
    }

    /// Context the hidden message is ranked after.
    pub fn message_context(&self, model: &dyn LanguageModel) -> Result<Vec<Token>> {
        build_context(model, self.k_prime.as_deref(), self.bos_policy)
    }

    pub fn to_toml(&self) -> String {
        let file = KeyFile {
            format_version: KEY_FORMAT_VERSION,
            model_fingerprint: self.fingerprint,
            k: self.k.clone(),
            k_prime: self.k_prime.clone(),
            pad_len: self.pad_len as u64,
            bos_policy: self.bos_policy,
            token_transport: self.token_transport,
            allow_empty_k: self.allow_empty_k,
        };
        toml::to_string(&file).expect("key fields are always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: KeyFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("key file: {e}")))?;
        if file.format_version != KEY_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported key format version {}",
                file.format_version
            )));
        }
        let key = StegoKey {
            k: file.k,
            k_prime: file.k_prime,
            pad_len: file.pad_len as usize,
            fingerprint: file.model_fingerprint,
            bos_policy: file.bos_policy,
            token_transport: file.token_transport,
            allow_empty_k: file.allow_empty_k,
        };
        key.validate()?;
        Ok(key)
    }
}

/// The single routine both directions use to turn a prompt into context
/// tokens. No chat template is ever applied.
pub fn build_context(
    model: &dyn LanguageModel,
    prompt: Option<&str>,
    bos: bool,
) -> Result<Vec<Token>> {
    let mut ctx = Vec::new();
    if bos {
        ctx.push(model.bos_token().ok_or(Error::BosUnavailable)?);
    }
    if let Some(p) = prompt {
        ctx.extend(model.tokenize(p)?);
    }
    Ok(ctx)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyFile {
    format_version: u32,
    model_fingerprint: ModelFingerprint,
    k: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k_prime: Option<String>,
    pad_len: u64,
    bos_policy: bool,
    token_transport: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    allow_empty_k: bool,
}
