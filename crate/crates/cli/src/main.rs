use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

mod analyze;
mod bridge;
mod keys;
mod selftest;
mod source;

use source::ModelOptions;

/// Rank-based generative text steganography.
#[derive(Parser, Debug)]
#[command(name = "rankstego", version)]
struct Cli {
    /// Suppress warnings
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(flatten)]
    model: ModelOptions,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Create a key file bound to the loaded model
    Keygen(keys::KeygenArgs),
    /// Hide a plaintext file in a stegotext
    Encode(keys::EncodeArgs),
    /// Recover the hidden plaintext from a stegotext
    Decode(keys::DecodeArgs),
    /// Extract or emit raw rank streams
    #[command(subcommand)]
    Ranks(keys::RanksCommand),
    /// Plausibility and rank statistics
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Move rank streams between vocabularies and rank distributions
    #[command(subcommand)]
    Bridge(bridge::BridgeCommand),
    /// Pack or unpack a covert relay envelope
    #[command(subcommand)]
    Relay(keys::RelayCommand),
    /// Check determinism, tokenizer stability and a codec roundtrip
    Selftest(selftest::SelftestArgs),
    /// Reference model utilities
    #[command(subcommand)]
    Model(ModelCommand),
    /// Serve a reference model file over the backend protocol on stdio
    #[command(hide = true)]
    ServeBackend {
        weights: PathBuf,
        #[arg(default_value = "")]
        config: String,
    },
}

#[derive(Subcommand, Debug)]
enum ModelCommand {
    /// Count a UTF-8 corpus into a reference model file
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Print the fingerprint of the loaded model
    Fingerprint,
}

/// Reads a UTF-8 file, or stdin for `None` / `-`.
pub fn read_input(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) if p != Path::new("-") => source::read_utf8(p),
        _ => {
            let mut bytes = Vec::new();
            std::io::stdin().read_to_end(&mut bytes)?;
            String::from_utf8(bytes).context("stdin is not valid UTF-8")
        }
    }
}

/// Writes to a file, or stdout for `None` / `-`.
pub fn write_output(path: Option<&Path>, body: &str) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, body).with_context(|| format!("writing {}", p.display()))
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn warn(quiet: bool, msg: &str) {
    if !quiet {
        eprintln!("warning: {msg}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Keygen(args) => keys::keygen(&cli.model, args),
        Command::Encode(args) => keys::encode(&cli.model, args, quiet),
        Command::Decode(args) => keys::decode(&cli.model, args),
        Command::Ranks(cmd) => keys::ranks(&cli.model, cmd),
        Command::Analyze(cmd) => analyze::run(&cli.model, cmd),
        Command::Bridge(cmd) => bridge::run(&cli.model, cmd),
        Command::Relay(cmd) => keys::relay(&cli.model, cmd),
        Command::Selftest(args) => selftest::run(&cli.model, args),
        Command::Model(ModelCommand::Build { corpus, output }) => {
            let model = rankstego::ReferenceModel::build(
                &source::read_utf8(&corpus)?,
                cli.model.smoothing,
            )?;
            model.save(&output)?;
            println!("{}", rankstego::LanguageModel::fingerprint(&model).to_hex());
            Ok(())
        }
        Command::Model(ModelCommand::Fingerprint) => {
            let model = cli.model.load_unchecked()?;
            println!("{}", model.fingerprint().to_hex());
            Ok(())
        }
        Command::ServeBackend { weights, config } => {
            let model = rankstego::ReferenceModel::load(&weights)?;
            if !config.is_empty() && config != rankstego::reference::CONFIG {
                bail!(
                    "reference backend only accepts config {:?}",
                    rankstego::reference::CONFIG
                );
            }
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            rankstego::backend::serve(&model, stdin, stdout)?;
            Ok(())
        }
    }
}

/// Stable exit codes for library errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    use rankstego::Error as E;
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<E>()) else {
        return 1;
    };
    match e {
        E::RetokenizationUnstable { .. } => 2,
        E::FingerprintMismatch { .. } => 3,
        E::ContextOverflow { .. } => 4,
        E::RankOutOfRange { .. } => 5,
        E::LengthMismatch { .. } => 6,
        E::NondeterminismDetected => 7,
        _ => 1,
    }
}

/// Usage errors get their own code so they never collide with the table.
const USAGE_EXIT: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
