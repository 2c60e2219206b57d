use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rankstego::model::probe_determinism;
use rankstego::{corpus, decode, encode, Error, LanguageModel, ModelFingerprint, StegoKey};

use crate::keys::load_key;
use crate::source::ModelOptions;

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Check the model against the fingerprint in this key file
    #[arg(long, conflicts_with = "expect_fingerprint")]
    key: Option<PathBuf>,
    /// Check the model against this hex fingerprint
    #[arg(long, value_name = "HEX")]
    expect_fingerprint: Option<String>,
    /// Determinism probe repetitions
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Bundled passages used for the tokenizer and roundtrip checks
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

fn line(ok: bool, name: &str, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn tokenizer_check(model: &dyn LanguageModel, samples: &[&str]) -> Result<usize, String> {
    let mut checked = 0;
    for (i, text) in samples.iter().enumerate() {
        let tokens = match model.tokenize(text) {
            Ok(t) => t,
            // passages outside the vocabulary say nothing about stability
            Err(Error::Encoding { .. }) => continue,
            Err(e) => return Err(format!("passage {i}: {e}")),
        };
        let back = model
            .detokenize(&tokens)
            .map_err(|e| format!("passage {i}: {e}"))?;
        if back != *text {
            return Err(format!("passage {i} does not detokenize to itself"));
        }
        let again = model
            .tokenize(&back)
            .map_err(|e| format!("passage {i}: {e}"))?;
        if again != tokens {
            return Err(format!("passage {i} re-tokenizes differently"));
        }
        checked += 1;
    }
    Ok(checked)
}

fn roundtrip_check(model: &dyn LanguageModel, samples: &[&str]) -> Result<usize, String> {
    let key = StegoKey::new("Write a short note to a colleague.", model.fingerprint());
    let mut checked = 0;
    for (i, text) in samples.iter().enumerate() {
        let stego = match encode(model, text, &key) {
            Ok(s) => s,
            Err(Error::Encoding { .. }) => continue,
            Err(e) => return Err(format!("passage {i}: {e}")),
        };
        let back = decode(model, &stego, &key).map_err(|e| format!("passage {i}: {e}"))?;
        if back != *text {
            return Err(format!("passage {i} did not survive encode/decode"));
        }
        checked += 1;
    }
    Ok(checked)
}

pub fn run(opts: &ModelOptions, args: SelftestArgs) -> Result<()> {
    let model = opts.load_unchecked()?;
    let model = model.as_ref();
    let found = model.fingerprint();
    let mut first_error: Option<Error> = None;

    let expected = match (&args.key, &args.expect_fingerprint) {
        (Some(p), _) => Some(load_key(p)?.fingerprint),
        (None, Some(hex)) => Some(ModelFingerprint::from_hex(hex)?),
        (None, None) => None,
    };
    match expected {
        Some(expected) if expected != found => {
            line(
                false,
                "fingerprint",
                &format!("expected {expected}, model is {found}"),
            );
            first_error = Some(Error::FingerprintMismatch { expected, found });
        }
        Some(_) => line(true, "fingerprint", &found.to_hex()),
        None => println!(
            "SKIP fingerprint: {} (no expectation given)",
            found.to_hex()
        ),
    }

    match probe_determinism(model, args.repeats) {
        Ok(digest) => line(
            true,
            "determinism",
            &format!(
                "{} identical probes, digest {}",
                args.repeats.max(2),
                hex(&digest)
            ),
        ),
        Err(e) => {
            line(false, "determinism", &e.to_string());
            first_error.get_or_insert(e);
        }
    }

    let passages = corpus::passages();
    let samples = &passages[..args.samples.min(passages.len())];
    match tokenizer_check(model, samples) {
        Ok(n) => line(true, "tokenizer", &format!("{n} passages stable")),
        Err(msg) => {
            line(false, "tokenizer", &msg);
            first_error.get_or_insert(Error::InvalidInput(msg));
        }
    }
    match roundtrip_check(model, samples) {
        Ok(n) => line(true, "roundtrip", &format!("{n} passages recovered")),
        Err(msg) => {
            line(false, "roundtrip", &msg);
            first_error.get_or_insert(Error::InvalidInput(msg));
        }
    }

    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
