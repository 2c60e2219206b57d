//! Hide a token sequence inside a generated text of the same length, using
//! the next-token rank stream of a deterministic language model.

pub mod analyzer;
pub mod backend;
pub mod bridge;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod key;
pub mod model;
pub mod reference;
pub mod relay;

pub use codec::{decode, encode, RankSequence, StegoText};
pub use error::{Error, Result};
pub use key::StegoKey;
pub use model::{LanguageModel, ModelFingerprint, NextTokenRanking, Token, TokenSequence};
pub use reference::ReferenceModel;
