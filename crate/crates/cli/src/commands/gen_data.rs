use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tlrp_core::data::{gen_keyword_sentiment, save_dataset};

use crate::error::CliResult;
use crate::manifest::Run;

/// Generate the synthetic keyword-sentiment dataset.
#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2500)]
    pub n_examples: usize,
    #[arg(long, default_value_t = 24)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 40)]
    pub vocab_size: usize,
    /// Output directory; receives `dataset.jsonl` and the manifest.
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: PathBuf,
}

pub fn run(args: &GenDataArgs) -> CliResult<()> {
    let mut run = Run::start("gen-data", args, Some(&args.out))?;
    run.seed("data", args.seed);
    let data = gen_keyword_sentiment(args.seed, args.n_examples, args.seq_len, args.vocab_size)?;
    let path = run.out_path("dataset.jsonl");
    save_dataset(&data, &path)?;
    run.record_output(&path)?;
    run.finish()?;
    println!("wrote {} examples to {}", data.len(), path.display());
    Ok(())
}
