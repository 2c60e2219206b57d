use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rankstego::codec::{emit_by_ranks, encode_tokens, extract_ranks};
use rankstego::key::DEFAULT_PAD_LEN;
use rankstego::relay::{relay_pack, relay_unpack, RelayEnvelope};
use rankstego::{decode as decode_stego, LanguageModel, StegoKey, StegoText};

use crate::source::{read_utf8, ModelOptions};
use crate::{read_input, warn, write_output};

/// Mean message rank above which the plaintext looks hash-like to the model
/// and the stegotext will read as noise.
pub const WARN_MEAN_RANK: f64 = 20.0;

#[derive(Args, Debug)]
pub struct KeygenArgs {
    /// File holding the secret prompt k (default: $RANKSTEGO_K)
    #[arg(long, value_name = "PATH")]
    k_file: Option<PathBuf>,
    /// File holding the context prompt k' the message is ranked after
    #[arg(long, value_name = "PATH")]
    k_prime_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAD_LEN)]
    pad_len: usize,
    /// Append a random bracketed number to k
    #[arg(long)]
    nonce: bool,
    /// Seed for --nonce
    #[arg(long, requires = "nonce")]
    seed: Option<u64>,
    /// Prepend the model's begin-of-sequence token to both contexts
    #[arg(long)]
    bos: bool,
    /// Ship stegotexts as token ids instead of text
    #[arg(long)]
    token_transport: bool,
    /// Accept an empty k
    #[arg(long)]
    allow_empty_k: bool,
    #[arg(long, short)]
    output: PathBuf,
}

pub fn keygen(opts: &ModelOptions, args: KeygenArgs) -> Result<()> {
    let model = opts.load()?;
    let mut k = match &args.k_file {
        Some(p) => read_utf8(p)?,
        None => std::env::var("RANKSTEGO_K").context("give --k-file or set RANKSTEGO_K")?,
    };
    if args.nonce {
        let mut rng = match args.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_entropy(),
        };
        let n: u64 = rng.gen_range(1_000_000_000..10_000_000_000);
        k.push_str(&format!(" [{n}]"));
    }
    let mut key = StegoKey::new(k, model.fingerprint())
        .with_pad_len(args.pad_len)
        .with_bos(args.bos)
        .with_token_transport(args.token_transport);
    if let Some(p) = &args.k_prime_file {
        key = key.with_k_prime(read_utf8(p)?);
    }
    if args.allow_empty_k {
        key = key.allowing_empty_k();
    }
    key.validate()?;
    // contexts must tokenize and fit before the key is worth keeping
    let needed = key
        .stego_context(model.as_ref())?
        .len()
        .max(key.message_context(model.as_ref())?.len());
    if needed >= model.context_window() {
        return Err(rankstego::Error::ContextOverflow {
            needed,
            window: model.context_window(),
        }
        .into());
    }
    write_secret(&args.output, &key.to_toml())?;
    load_key(&args.output)?.check_model(model.as_ref())?;
    Ok(())
}

fn write_secret(path: &Path, body: &str) -> Result<()> {
    use std::io::Write;
    let mut opts = std::fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

pub fn load_key(path: &Path) -> Result<StegoKey> {
    let text = read_utf8(path)?;
    StegoKey::from_toml(&text).with_context(|| format!("key {}", path.display()))
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Key file written by keygen
    #[arg(long, short)]
    key: PathBuf,
    /// Plaintext (default: stdin)
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Stegotext (default: stdout)
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write the carried rank stream, one rank per line
    #[arg(long, value_name = "PATH")]
    ranks_out: Option<PathBuf>,
}

pub fn encode(opts: &ModelOptions, args: EncodeArgs, quiet: bool) -> Result<()> {
    let key = load_key(&args.key)?;
    let model = opts.load()?;
    let plaintext = read_input(args.input.as_deref())?;
    let message = model.tokenize(&plaintext)?;
    let (stego, ranks) = encode_tokens(model.as_ref(), &message, &key)?;
    let carried = &ranks.ranks[..message.len()];
    if !carried.is_empty() {
        let mean = carried.iter().map(|&r| r as f64).sum::<f64>() / carried.len() as f64;
        if mean > WARN_MEAN_RANK {
            warn(
                quiet,
                &format!(
                    "mean message rank {mean:.1} exceeds {WARN_MEAN_RANK}; the plaintext looks random to the model and the stegotext will not read naturally"
                ),
            );
        }
    }
    if let Some(p) = &args.ranks_out {
        write_output(Some(p), &rank_lines(&ranks.ranks))?;
    }
    let body = if key.token_transport {
        stego.token_lines()
    } else {
        stego.text
    };
    write_output(args.output.as_deref(), &body)
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Key file written by keygen
    #[arg(long, short)]
    key: PathBuf,
    /// Stegotext (default: stdin)
    #[arg(long, short)]
    input: Option<PathBuf>,
    /// Recovered plaintext (default: stdout)
    #[arg(long, short)]
    output: Option<PathBuf>,
}

pub fn read_stego(model: &dyn LanguageModel, key: &StegoKey, body: &str) -> Result<StegoText> {
    Ok(if key.token_transport {
        StegoText::from_tokens(model, StegoText::parse_token_lines(body)?)
    } else {
        StegoText::from_text(model, body)?
    })
}

pub fn decode(opts: &ModelOptions, args: DecodeArgs) -> Result<()> {
    let key = load_key(&args.key)?;
    let model = opts.load()?;
    let body = read_input(args.input.as_deref())?;
    let stego = read_stego(model.as_ref(), &key, &body)?;
    let plaintext = decode_stego(model.as_ref(), &stego, &key)?;
    write_output(args.output.as_deref(), &plaintext)
}

pub fn rank_lines(ranks: &[u32]) -> String {
    ranks.iter().map(|r| format!("{r}\n")).collect()
}

pub fn parse_rank_lines(body: &str) -> Result<Vec<u32>> {
    body.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<u32>()
                .with_context(|| format!("line {}: not a rank: {l:?}", i + 1))
        })
        .collect()
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum Side {
    /// After k' (the hidden message side)
    Message,
    /// After k (the stegotext side)
    Stego,
}

#[derive(Subcommand, Debug)]
pub enum RanksCommand {
    /// Rank every token of a text, without padding
    Extract {
        #[arg(long, short)]
        key: PathBuf,
        #[arg(long, value_enum)]
        side: Side,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Emit the token at each rank and print the text
    Emit {
        #[arg(long, short)]
        key: PathBuf,
        #[arg(long, value_enum)]
        side: Side,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn side_context(
    model: &dyn LanguageModel,
    key: &StegoKey,
    side: Side,
) -> Result<Vec<rankstego::Token>> {
    key.check_model(model)?;
    Ok(match side {
        Side::Message => key.message_context(model)?,
        Side::Stego => key.stego_context(model)?,
    })
}

pub fn ranks(opts: &ModelOptions, cmd: RanksCommand) -> Result<()> {
    match cmd {
        RanksCommand::Extract {
            key,
            side,
            input,
            output,
        } => {
            let key = load_key(&key)?;
            let model = opts.load()?;
            let ctx = side_context(model.as_ref(), &key, side)?;
            let tokens = model.tokenize(&read_input(input.as_deref())?)?;
            let ranks = extract_ranks(model.as_ref(), &tokens, &ctx)?;
            write_output(output.as_deref(), &rank_lines(&ranks.ranks))
        }
        RanksCommand::Emit {
            key,
            side,
            input,
            output,
        } => {
            let key = load_key(&key)?;
            let model = opts.load()?;
            let ctx = side_context(model.as_ref(), &key, side)?;
            let ranks = parse_rank_lines(&read_input(input.as_deref())?)?;
            let tokens = emit_by_ranks(model.as_ref(), &ranks, &ctx)?;
            write_output(output.as_deref(), &model.detokenize(&tokens)?)
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum RelayCommand {
    /// Hide answer u inside a surface answer steered by trace t
    Pack {
        /// User request c
        #[arg(long, value_name = "PATH")]
        c_file: PathBuf,
        /// Reasoning trace t
        #[arg(long, value_name = "PATH")]
        t_file: PathBuf,
        /// Unfiltered answer u
        #[arg(long, value_name = "PATH")]
        u_file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAD_LEN)]
        pad_len: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Recover u from an envelope
    Unpack {
        #[arg(long, short)]
        envelope: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

pub fn relay(opts: &ModelOptions, cmd: RelayCommand) -> Result<()> {
    match cmd {
        RelayCommand::Pack {
            c_file,
            t_file,
            u_file,
            pad_len,
            output,
        } => {
            let model = opts.load()?;
            let env = relay_pack(
                model.as_ref(),
                &read_utf8(&c_file)?,
                &read_utf8(&t_file)?,
                &read_utf8(&u_file)?,
                pad_len,
            )?;
            write_output(output.as_deref(), &env.to_toml())
        }
        RelayCommand::Unpack { envelope, output } => {
            let env = RelayEnvelope::from_toml(&read_utf8(&envelope)?)?;
            let model = opts.load()?;
            write_output(output.as_deref(), &relay_unpack(model.as_ref(), &env)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_files_roundtrip() {
        let ranks = [1, 7, 256, 1];
        assert_eq!(parse_rank_lines(&rank_lines(&ranks)).unwrap(), ranks);
        assert_eq!(parse_rank_lines(" 3 \n\n4\n").unwrap(), [3, 4]);
        assert!(parse_rank_lines("1\nx\n").is_err());
        assert!(parse_rank_lines("-1\n").is_err());
    }
}
