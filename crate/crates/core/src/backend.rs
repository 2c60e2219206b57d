//! Adapter for external native-inference backends.
//!
//! A backend is any program that, started as `<command...> <weights> <config>`,
//! answers JSON-line requests on stdin with JSON-line responses on stdout:
//!
//! ```text
//! {"op":"info"}                      -> {"vocab_size":V,"context_window":W,"bos_token":id|null}
//! {"op":"tokenize","text":"..."}     -> {"tokens":[...]}
//! {"op":"detokenize","tokens":[...]} -> {"text":"..."}
//! {"op":"logits","context":[...]}    -> {"logits":[...]}
//! ```
//!
//! Any request may instead be answered with `{"error":"..."}`. Tokenization
//! must not insert special tokens and no chat template may be applied.
//! [`serve`] implements the server side for any [`LanguageModel`].

use std::cell::RefCell;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{check_window, LanguageModel, ModelFingerprint, Token};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Info,
    Tokenize { text: String },
    Detokenize { tokens: Vec<u32> },
    Logits { context: Vec<u32> },
}

#[derive(Debug, Serialize, Deserialize)]
struct Info {
    vocab_size: usize,
    context_window: usize,
    bos_token: Option<u32>,
}

struct Pipe {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
}

impl Drop for Pipe {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A model served by a child process over the JSON-line protocol.
pub struct SubprocessBackend {
    pipe: RefCell<Pipe>,
    info: Info,
    fingerprint: ModelFingerprint,
}

fn unavailable(msg: impl std::fmt::Display) -> Error {
    Error::BackendUnavailable(msg.to_string())
}

impl SubprocessBackend {
    /// Starts `command` with the weight path and configuration appended as
    /// the last two arguments. The fingerprint hashes the weight file.
    pub fn spawn(command: &[String], weights: &Path, config: &str) -> Result<Self> {
        let fingerprint = ModelFingerprint::from_file(weights, config)
            .map_err(|e| unavailable(format!("cannot read weights {}: {e}", weights.display())))?;
        let (program, args) = command
            .split_first()
            .ok_or_else(|| unavailable("empty backend command"))?;
        let mut child = Command::new(program)
            .args(args)
            .arg(weights)
            .arg(config)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| unavailable(format!("cannot start {program}: {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let pipe = RefCell::new(Pipe {
            child,
            stdin,
            stdout,
        });
        let mut backend = SubprocessBackend {
            pipe,
            info: Info {
                vocab_size: 0,
                context_window: 0,
                bos_token: None,
            },
            fingerprint,
        };
        let info: Info = serde_json::from_value(backend.call(&Request::Info)?)
            .map_err(|e| unavailable(format!("bad info response: {e}")))?;
        if info.vocab_size == 0 {
            return Err(unavailable("backend reports an empty vocabulary"));
        }
        backend.info = info;
        Ok(backend)
    }

    fn call(&self, req: &Request) -> Result<Value> {
        let mut pipe = self.pipe.borrow_mut();
        let line = serde_json::to_string(req).expect("requests serialize");
        writeln!(pipe.stdin, "{line}").map_err(unavailable)?;
        pipe.stdin.flush().map_err(unavailable)?;
        let mut resp = String::new();
        if pipe.stdout.read_line(&mut resp).map_err(unavailable)? == 0 {
            return Err(unavailable("backend closed its output"));
        }
        let value: Value = serde_json::from_str(&resp)
            .map_err(|e| unavailable(format!("malformed response: {e}")))?;
        if let Some(msg) = value.get("error") {
            return Err(unavailable(format!("backend error: {msg}")));
        }
        Ok(value)
    }

    fn field<T: serde::de::DeserializeOwned>(value: Value, name: &str) -> Result<T> {
        let field = value
            .get(name)
            .cloned()
            .ok_or_else(|| unavailable(format!("response lacks `{name}`")))?;
        serde_json::from_value(field).map_err(|e| unavailable(format!("bad `{name}`: {e}")))
    }
}

impl LanguageModel for SubprocessBackend {
    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn context_window(&self) -> usize {
        self.info.context_window
    }

    fn fingerprint(&self) -> ModelFingerprint {
        self.fingerprint
    }

    fn bos_token(&self) -> Option<Token> {
        self.info.bos_token.map(Token)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<Token>> {
        let resp = self.call(&Request::Tokenize {
            text: text.to_string(),
        })?;
        let ids: Vec<u32> = Self::field(resp, "tokens")?;
        Ok(ids.into_iter().map(Token).collect())
    }

    fn detokenize(&self, tokens: &[Token]) -> Result<String> {
        let resp = self.call(&Request::Detokenize {
            tokens: tokens.iter().map(|t| t.0).collect(),
        })?;
        Self::field(resp, "text")
    }

    fn next_logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        check_window(self.info.context_window, context.len())?;
        let resp = self.call(&Request::Logits {
            context: context.iter().map(|t| t.0).collect(),
        })?;
        Self::field(resp, "logits")
    }
}

fn handle(model: &dyn LanguageModel, req: Request) -> Result<Value> {
    Ok(match req {
        Request::Info => serde_json::to_value(Info {
            vocab_size: model.vocab_size(),
            context_window: model.context_window(),
            bos_token: model.bos_token().map(|t| t.0),
        })
        .expect("info serializes"),
        Request::Tokenize { text } => {
            let ids: Vec<u32> = model.tokenize(&text)?.into_iter().map(|t| t.0).collect();
            serde_json::json!({ "tokens": ids })
        }
        Request::Detokenize { tokens } => {
            let tokens: Vec<Token> = tokens.into_iter().map(Token).collect();
            serde_json::json!({ "text": model.detokenize(&tokens)? })
        }
        Request::Logits { context } => {
            let context: Vec<Token> = context.into_iter().map(Token).collect();
            serde_json::json!({ "logits": model.next_logits(&context)? })
        }
    })
}

/// Serves `model` over the JSON-line protocol until `input` is exhausted.
pub fn serve(model: &dyn LanguageModel, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                handle(model, req).unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() }))
            }
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }),
        };
        writeln!(output, "{resp}")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::ReferenceModel;

    fn roundtrip(model: &dyn LanguageModel, requests: &[&str]) -> Vec<Value> {
        let input = requests.join("\n");
        let mut out = Vec::new();
        serve(model, input.as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn serve_answers_each_op() {
        let m = ReferenceModel::build("ABAB", 1.0).unwrap();
        let resp = roundtrip(
            &m,
            &[
                r#"{"op":"info"}"#,
                r#"{"op":"tokenize","text":"AB"}"#,
                r#"{"op":"detokenize","tokens":[65,66]}"#,
                r#"{"op":"logits","context":[65]}"#,
                r#"{"op":"tokenize","text":"café"}"#,
                r#"{"op":"bogus"}"#,
            ],
        );
        assert_eq!(resp[0]["vocab_size"], 256);
        assert_eq!(resp[0]["bos_token"], Value::Null);
        assert_eq!(resp[1]["tokens"], serde_json::json!([65, 66]));
        assert_eq!(resp[2]["text"], "AB");
        let logits: Vec<f64> = serde_json::from_value(resp[3]["logits"].clone()).unwrap();
        assert_eq!(logits.len(), 256);
        assert_eq!(logits[66], (3.0f64 / 258.0).ln());
        assert!(resp[4].get("error").is_some());
        assert!(resp[5].get("error").is_some());
    }

    #[test]
    fn spawn_failures_are_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let weights = dir.path().join("w");
        std::fs::write(&weights, b"x").unwrap();
        let cmd = vec!["/nonexistent/backend".to_string()];
        assert!(matches!(
            SubprocessBackend::spawn(&cmd, &weights, ""),
            Err(Error::BackendUnavailable(_))
        ));
        assert!(matches!(
            SubprocessBackend::spawn(&cmd, &dir.path().join("missing"), ""),
            Err(Error::BackendUnavailable(_))
        ));
    }
}
