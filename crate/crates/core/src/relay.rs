//! Covert relay of an unfiltered answer inside a compliant one.
//!
//! The unfiltered answer `u` is ranked after the user request `c`, and the
//! surface answer `s` is generated from those ranks after the reasoning
//! trace `t`. The envelope ships `c`, `t` and `s` in the clear; only the
//! exact model recovers `u`.

use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, StegoText};
use crate::error::{Error, Result};
use crate::key::StegoKey;
use crate::model::{LanguageModel, ModelFingerprint};

pub const ENVELOPE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayEnvelope {
    /// User request, used as `k'`.
    pub c: String,
    /// Reasoning trace, used verbatim as `k`.
    pub t: String,
    /// Surface answer carrying the hidden one.
    pub s: String,
    pub model_fingerprint: ModelFingerprint,
    pub pad_len: u64,
    pub format_version: u32,
}

impl RelayEnvelope {
    /// The codec key this envelope implies.
    pub fn key(&self) -> StegoKey {
        StegoKey::new(self.t.clone(), self.model_fingerprint)
            .with_k_prime(self.c.clone())
            .with_pad_len(self.pad_len as usize)
            .allowing_empty_k()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("envelope fields are always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let env: RelayEnvelope =
            toml::from_str(text).map_err(|e| Error::Format(format!("envelope: {e}")))?;
        if env.format_version != ENVELOPE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported envelope version {}",
                env.format_version
            )));
        }
        Ok(env)
    }
}

pub fn relay_pack(
    model: &dyn LanguageModel,
    c: &str,
    t: &str,
    u: &str,
    pad_len: usize,
) -> Result<RelayEnvelope> {
    let fingerprint = model.fingerprint();
    let key = StegoKey::new(t, fingerprint)
        .with_k_prime(c)
        .with_pad_len(pad_len)
        .allowing_empty_k();
    let stego = encode(model, u, &key)?;
    Ok(RelayEnvelope {
        c: c.to_string(),
        t: t.to_string(),
        s: stego.text,
        model_fingerprint: fingerprint,
        pad_len: pad_len as u64,
        format_version: ENVELOPE_FORMAT_VERSION,
    })
}

pub fn relay_unpack(model: &dyn LanguageModel, envelope: &RelayEnvelope) -> Result<String> {
    let key = envelope.key();
    key.check_model(model)?;
    let stego = StegoText::from_text(model, &envelope.s)?;
    decode(model, &stego, &key)
}
