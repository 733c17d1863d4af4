use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tlrp_core::conservation::{default_eps_ladder, relevance_collapse_profile};

use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::render::{line_chart, Series};

/// Share of relevance surviving a LayerNorm as a function of eps.
#[derive(Debug, Args, Serialize)]
pub struct CollapseArgs {
    /// Comma-separated input vector.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub values: Vec<f64>,
    /// Comma-separated eps values; defaults to 1e-9 through 1e3.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: PathBuf,
}

pub fn run(args: &CollapseArgs) -> CliResult<()> {
    let ladder = if args.eps.is_empty() { default_eps_ladder() } else { args.eps.clone() };
    if let Some(bad) = ladder.iter().find(|e| !(**e > 0.0)) {
        return Err(CliError::Usage(format!("eps values must be positive, got {bad}")));
    }
    let mut run = Run::start("collapse", args, Some(&args.out))?;
    let profile = relevance_collapse_profile(&args.values, &ladder);
    let mut csv = String::from("eps,ratio\n");
    for p in &profile {
        let _ = writeln!(csv, "{},{}", p.eps, p.ratio);
    }
    run.write("collapse.csv", csv)?;
    let points: Vec<[f64; 2]> = profile.iter().map(|p| [p.eps.log10(), p.ratio]).collect();
    let svg = line_chart(
        "Relevance kept by LayerNorm",
        "log10 eps",
        "sum R(x) / sum R(y)",
        &[Series {
            label: "ratio".into(),
            points: &points,
        }],
    )
    .map_err(CliError::Runtime)?;
    run.write("collapse.svg", svg)?;
    run.finish()?;
    for p in &profile {
        println!("eps {:>10.3e}  ratio {:.6}", p.eps, p.ratio);
    }
    Ok(())
}
