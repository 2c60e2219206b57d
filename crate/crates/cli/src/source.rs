use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::Args;
use rankstego::backend::SubprocessBackend;
use rankstego::model::{
    verify_determinism, LanguageModel, ModelFingerprint, NextTokenRanking, Token,
};
use rankstego::ReferenceModel;

/// Where the model comes from. Exactly one source may be given; without
/// one, `RANKSTEGO_MODEL` names a reference model file or backend weights.
#[derive(Args, Debug, Clone)]
#[group(multiple = false)]
#[command(next_help_heading = "Model")]
pub struct ModelSource {
    /// Build a byte-level reference model from this UTF-8 corpus
    #[arg(long, global = true, value_name = "PATH")]
    pub reference_corpus: Option<PathBuf>,

    /// Load a serialized reference model (RSBG file)
    #[arg(long, global = true, value_name = "PATH")]
    pub reference_model: Option<PathBuf>,

    /// Weight file for an external backend (see --backend-cmd)
    #[arg(long, global = true, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
#[command(next_help_heading = "Model")]
pub struct ModelOptions {
    #[command(flatten)]
    pub source: ModelSource,

    /// Smoothing for --reference-corpus
    #[arg(long, global = true, default_value_t = 1.0)]
    pub smoothing: f64,

    /// Backend program, started as `<cmd> <weights> <config>`
    #[arg(long, global = true, env = "RANKSTEGO_BACKEND_CMD", value_name = "CMD")]
    pub backend_cmd: Option<String>,

    /// Backend configuration string, folded into the fingerprint
    #[arg(long, global = true, default_value = "")]
    pub backend_config: String,

    /// Shrink the model context window
    #[arg(long, global = true, value_name = "TOKENS")]
    pub context_window: Option<usize>,
}

pub fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    String::from_utf8(bytes).with_context(|| format!("{} is not valid UTF-8", path.display()))
}

struct Windowed {
    inner: Model,
    window: usize,
}

impl LanguageModel for Windowed {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn context_window(&self) -> usize {
        self.window
    }
    fn fingerprint(&self) -> ModelFingerprint {
        self.inner.fingerprint()
    }
    fn bos_token(&self) -> Option<Token> {
        self.inner.bos_token()
    }
    fn tokenize(&self, text: &str) -> rankstego::Result<Vec<Token>> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, tokens: &[Token]) -> rankstego::Result<String> {
        self.inner.detokenize(tokens)
    }
    fn next_logits(&self, context: &[Token]) -> rankstego::Result<Vec<f64>> {
        self.inner.next_logits(context)
    }
    fn next_ranking(&self, context: &[Token]) -> rankstego::Result<Arc<NextTokenRanking>> {
        if context.len() > self.window {
            return Err(rankstego::Error::ContextOverflow {
                needed: context.len(),
                window: self.window,
            });
        }
        self.inner.next_ranking(context)
    }
}

pub type Model = Box<dyn LanguageModel + Send>;

fn is_reference_file(path: &Path) -> bool {
    use std::io::Read;
    let mut magic = [0u8; 4];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == rankstego::reference::MAGIC)
        .unwrap_or(false)
}

impl ModelOptions {
    /// Loads the model without the determinism probe.
    pub fn load_unchecked(&self) -> Result<Model> {
        let s = &self.source;
        let model: Model = if let Some(path) = &s.reference_corpus {
            Box::new(ReferenceModel::build(&read_utf8(path)?, self.smoothing)?)
        } else if let Some(path) = &s.reference_model {
            Box::new(
                ReferenceModel::load(path)
                    .with_context(|| format!("loading {}", path.display()))?,
            )
        } else if let Some(path) = &s.weights {
            self.spawn_backend(path)?
        } else if let Some(path) = std::env::var_os("RANKSTEGO_MODEL").map(PathBuf::from) {
            if is_reference_file(&path) {
                Box::new(ReferenceModel::load(&path)?)
            } else {
                self.spawn_backend(&path)?
            }
        } else {
            bail!("no model given: use --reference-corpus, --reference-model, --weights or RANKSTEGO_MODEL");
        };
        Ok(match self.context_window {
            Some(window) => {
                let window = window.min(model.context_window());
                Box::new(Windowed {
                    inner: model,
                    window,
                })
            }
            None => model,
        })
    }

    /// Loads the model and runs the session-start determinism probe.
    pub fn load(&self) -> Result<Model> {
        let model = self.load_unchecked()?;
        verify_determinism(model.as_ref())?;
        Ok(model)
    }

    fn spawn_backend(&self, weights: &Path) -> Result<Model> {
        let cmd = self
            .backend_cmd
            .as_deref()
            .context("--weights needs --backend-cmd (or RANKSTEGO_BACKEND_CMD)")?;
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        Ok(Box::new(SubprocessBackend::spawn(
            &argv,
            weights,
            &self.backend_config,
        )?))
    }
}
