use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Subcommand};
use rankstego::bridge::{
    arithmetic_recode, arithmetic_unrecode, build_rank_table, plan_remap, remap_stream,
    unremap_stream, RankFrequencyTable,
};
use rankstego::key::build_context;

use crate::keys::{parse_rank_lines, rank_lines};
use crate::source::{read_utf8, ModelOptions};
use crate::{read_input, write_output};

#[derive(Args, Debug)]
pub struct Vocabs {
    /// Encoder vocabulary size
    #[arg(long)]
    v_enc: u32,
    /// Decoder vocabulary size
    #[arg(long)]
    v_dec: u32,
}

#[derive(Subcommand, Debug)]
pub enum BridgeCommand {
    /// Print the digit-block layout for two vocabulary sizes
    Plan { v_enc: u32, v_dec: u32 },
    /// Rewrite encoder ranks as decoder ranks
    Remap {
        #[command(flatten)]
        vocabs: Vocabs,
        /// Ranks to map; without any, read one per line from --input
        ranks: Vec<u32>,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Inverse of remap
    Unremap {
        #[command(flatten)]
        vocabs: Vocabs,
        ranks: Vec<u32>,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Arithmetic-recode a rank stream from one rank distribution to another
    Recode {
        #[arg(long, value_name = "PATH")]
        src_table: PathBuf,
        #[arg(long, value_name = "PATH")]
        dst_table: PathBuf,
        /// Undo a previous recode
        #[arg(long)]
        inverse: bool,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Build a smoothed rank-frequency table from a corpus
    Table {
        /// One text per line
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        context_file: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

fn stream(ranks: Vec<u32>, input: Option<PathBuf>) -> Result<Vec<u32>> {
    if ranks.is_empty() {
        parse_rank_lines(&read_input(input.as_deref())?)
    } else {
        Ok(ranks)
    }
}

fn spaced(ranks: &[u32]) -> String {
    let parts: Vec<String> = ranks.iter().map(u32::to_string).collect();
    format!("{}\n", parts.join(" "))
}

pub fn run(opts: &ModelOptions, cmd: BridgeCommand) -> Result<()> {
    match cmd {
        BridgeCommand::Plan { v_enc, v_dec } => {
            let plan = plan_remap(v_enc, v_dec)?;
            if plan.is_identity() {
                println!("L={} B=0", plan.direct_limit);
                println!("identity: every encoder rank fits the decoder vocabulary");
            } else {
                println!("L={} B={}", plan.direct_limit, plan.block_size);
                let band = plan.ambiguous_band();
                let block = plan.block();
                println!("block={}..{}", block.start(), block.end());
                println!("ambiguous={}..{}", band.start(), band.end());
            }
            Ok(())
        }
        BridgeCommand::Remap {
            vocabs,
            ranks,
            input,
            output,
        } => {
            let plan = plan_remap(vocabs.v_enc, vocabs.v_dec)?;
            let explicit = !ranks.is_empty();
            let out = remap_stream(&plan, &stream(ranks, input)?)?;
            let body = if explicit {
                spaced(&out)
            } else {
                rank_lines(&out)
            };
            write_output(output.as_deref(), &body)
        }
        BridgeCommand::Unremap {
            vocabs,
            ranks,
            input,
            output,
        } => {
            let plan = plan_remap(vocabs.v_enc, vocabs.v_dec)?;
            let explicit = !ranks.is_empty();
            let out = unremap_stream(&plan, &stream(ranks, input)?)?;
            let body = if explicit {
                spaced(&out)
            } else {
                rank_lines(&out)
            };
            write_output(output.as_deref(), &body)
        }
        BridgeCommand::Recode {
            src_table,
            dst_table,
            inverse,
            input,
            output,
        } => {
            let src = RankFrequencyTable::load(&src_table)?;
            let dst = RankFrequencyTable::load(&dst_table)?;
            let ranks = parse_rank_lines(&read_input(input.as_deref())?)?;
            let out = if inverse {
                arithmetic_unrecode(&ranks, &src, &dst)?
            } else {
                arithmetic_recode(&ranks, &src, &dst)?
            };
            write_output(output.as_deref(), &rank_lines(&out))
        }
        BridgeCommand::Table {
            input,
            context_file,
            output,
        } => {
            let model = opts.load()?;
            let prompt = context_file.as_deref().map(read_utf8).transpose()?;
            let context = build_context(model.as_ref(), prompt.as_deref(), false)?;
            let corpus = read_utf8(&input)?
                .lines()
                .filter(|l| !l.is_empty())
                .map(|l| model.tokenize(l))
                .collect::<rankstego::Result<Vec<_>>>()?;
            build_rank_table(model.as_ref(), &corpus, &context)?.save(&output)?;
            Ok(())
        }
    }
}
