use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use rankstego::analyzer::{
    corpus_report, distinguish, positional_profile, rank_histogram, score, ReportConfig, ReportKey,
    ReportSession,
};
use rankstego::key::build_context;
use rankstego::{LanguageModel, ReferenceModel, Token};

use crate::source::{read_utf8, ModelOptions};
use crate::write_output;

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// One text per line
    #[arg(long, short)]
    input: PathBuf,
    /// Prompt every text is ranked after
    #[arg(long, value_name = "PATH")]
    context_file: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Cumulative log-probability of each line
    Score(CorpusArgs),
    /// Rank histogram over all tokens
    Hist(CorpusArgs),
    /// Rank percentiles per position over equal-length lines
    Profile {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Truncate every line to this many tokens first
        #[arg(long)]
        length: Option<usize>,
    },
    /// Pick the most probable of several equal-length lines
    Distinguish(CorpusArgs),
    /// Score real texts, stegotexts and random baselines
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Real texts, one per line
    #[arg(long)]
    real: PathBuf,
    /// Messages to hide, one per line
    #[arg(long)]
    originals: PathBuf,
    /// Secret prompts, one per line
    #[arg(long)]
    keys: PathBuf,
    /// Token length every text is truncated to
    #[arg(long, default_value_t = 85)]
    length: usize,
    /// Baselines of each kind
    #[arg(long, default_value_t = 100)]
    baselines: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Score with this reference model instead of the generating model
    #[arg(long, value_name = "PATH")]
    scorer_model: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_utf8(path)?.lines().map(str::to_string).collect())
}

struct Loaded {
    model: crate::source::Model,
    context: Vec<Token>,
    texts: Vec<Vec<Token>>,
}

fn load(opts: &ModelOptions, args: &CorpusArgs) -> Result<Loaded> {
    let model = opts.load()?;
    let prompt = args.context_file.as_deref().map(read_utf8).transpose()?;
    let context = build_context(model.as_ref(), prompt.as_deref(), false)?;
    let texts = lines(&args.input)?
        .iter()
        .map(|l| model.tokenize(l))
        .collect::<rankstego::Result<Vec<_>>>()?;
    Ok(Loaded {
        model,
        context,
        texts,
    })
}

pub fn run(opts: &ModelOptions, cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Score(args) => {
            let l = load(opts, &args)?;
            let mut out = String::from("index\ttoken_count\tlog_prob\n");
            for (i, t) in l.texts.iter().enumerate() {
                let s = score(l.model.as_ref(), t, &l.context)?;
                let _ = writeln!(out, "{i}\t{}\t{:.6}", s.token_count, s.log_prob);
            }
            write_output(args.output.as_deref(), &out)
        }
        AnalyzeCommand::Hist(args) => {
            let l = load(opts, &args)?;
            let hist = rank_histogram(l.model.as_ref(), &l.texts, &l.context)?;
            write_output(args.output.as_deref(), &hist.to_tsv())
        }
        AnalyzeCommand::Profile { corpus, length } => {
            let mut l = load(opts, &corpus)?;
            if let Some(n) = length {
                for (index, t) in l.texts.iter_mut().enumerate() {
                    if t.len() < n {
                        return Err(rankstego::Error::LengthMismatch {
                            index,
                            expected: n,
                            found: t.len(),
                        }
                        .into());
                    }
                    t.truncate(n);
                }
            }
            let profile = positional_profile(l.model.as_ref(), &l.texts, &l.context)?;
            write_output(corpus.output.as_deref(), &profile.to_tsv())
        }
        AnalyzeCommand::Distinguish(args) => {
            let l = load(opts, &args)?;
            let d = distinguish(l.model.as_ref(), &l.texts, &l.context)?;
            let mut out = String::from("index\ttoken_count\tlog_prob\twinner\n");
            for (i, s) in d.scores.iter().enumerate() {
                let mark = if i == d.winner { "*" } else { "" };
                let _ = writeln!(out, "{i}\t{}\t{:.6}\t{mark}", s.token_count, s.log_prob);
            }
            write_output(args.output.as_deref(), &out)
        }
        AnalyzeCommand::Report(args) => report(opts, args),
    }
}

fn report(opts: &ModelOptions, args: ReportArgs) -> Result<()> {
    let real = lines(&args.real)?;
    let originals = lines(&args.originals)?;
    let keys: Vec<ReportKey> = lines(&args.keys)?
        .into_iter()
        .enumerate()
        .map(|(i, prompt)| ReportKey {
            id: format!("key-{i}"),
            prompt,
        })
        .collect();
    // fail fast on a bad model before spawning workers
    opts.load()?;
    let scorer = args
        .scorer_model
        .as_deref()
        .map(|p| ReferenceModel::load(p).with_context(|| format!("loading {}", p.display())))
        .transpose()?;
    let sessions = || -> rankstego::Result<ReportSession> {
        let generator = opts
            .load()
            .map_err(|e| rankstego::Error::BackendUnavailable(format!("{e:#}")))?;
        let scorer: Box<dyn LanguageModel + Send> = match &scorer {
            Some(m) => Box::new(m.clone()),
            None => opts
                .load()
                .map_err(|e| rankstego::Error::BackendUnavailable(format!("{e:#}")))?,
        };
        Ok(ReportSession { generator, scorer })
    };
    let real: Vec<&str> = real.iter().map(String::as_str).collect();
    let originals: Vec<&str> = originals.iter().map(String::as_str).collect();
    let config = ReportConfig {
        length: args.length,
        baseline_count: args.baselines,
        seed: args.seed,
        jobs: args.jobs,
    };
    let report = corpus_report(sessions, &real, &originals, &keys, &config)?;
    write_output(args.output.as_deref(), &report.to_tsv())
}
