//! `tlrp`: train small transformers, explain their predictions and evaluate
//! the explanations.

mod commands;
mod error;
mod manifest;
mod render;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{benchmark, collapse, conservation, explain, gen_data, train};

#[derive(Debug, Parser)]
#[command(name = "tlrp", version, about = "Relevance propagation for small transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    GenData(gen_data::GenDataArgs),
    Train(train::TrainArgs),
    Explain(explain::ExplainArgs),
    Conservation(conservation::ConservationArgs),
    Benchmark(benchmark::BenchmarkArgs),
    Collapse(collapse::CollapseArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Explain(a) => explain::run(a),
        Command::Conservation(a) => conservation::run(a),
        Command::Benchmark(a) => benchmark::run(a),
        Command::Collapse(a) => collapse::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
