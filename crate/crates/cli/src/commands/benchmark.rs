use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use tlrp_core::eval::{run_benchmark, BenchmarkOptions, BenchmarkTable, BenchmarkTarget, PruningMetric, Task};
use tlrp_core::{ExplainOptions, Method};

use super::{load_data, load_model, select, Split};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::render::{line_chart, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArg {
    PredictedLogit,
    PredictedMargin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruningArg {
    PredictedLogit,
    LogitVector,
}

/// Score explanation methods with the activation and pruning tasks.
#[derive(Debug, Args, Serialize)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "random,a-last,a-flow,rollout,gae,gi,lrp-ah,lrp-ln,lrp-ah-ln"
    )]
    pub methods: Vec<Method>,
    /// Base seed; example `i` of the random baseline uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = TargetArg::PredictedLogit)]
    pub target: TargetArg,
    #[arg(long, value_enum, default_value_t = PruningArg::PredictedLogit)]
    pub pruning_metric: PruningArg,
    #[arg(long, default_value_t = 32)]
    pub flow_max_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rollout_residual: f64,
}

fn curve_svgs(run: &mut Run, table: &BenchmarkTable) -> CliResult<()> {
    for (task, name, y) in [
        (Task::Activation, "activation", "probability of predicted class"),
        (Task::Pruning, "pruning", "squared logit change"),
    ] {
        let curves: Vec<_> = table.mean_curves.iter().filter(|c| c.task == task).collect();
        let series: Vec<Series> = curves
            .iter()
            .map(|c| Series {
                label: c.method.to_string(),
                points: &c.points,
            })
            .collect();
        let svg = line_chart(name, "fraction of tokens", y, &series).map_err(CliError::Runtime)?;
        run.write(&format!("curves/{name}.svg"), svg)?;
        for s in &series {
            let svg = line_chart(&format!("{} {name}", s.label), "fraction of tokens", y, std::slice::from_ref(s))
                .map_err(CliError::Runtime)?;
            run.write(&format!("curves/{}-{name}.svg", s.label), svg)?;
        }
    }
    Ok(())
}

pub fn run(args: &BenchmarkArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let data = load_data(&args.dataset, Some(&model))?;
    let examples = select(&data, args.split, args.limit)?;
    let seqs: Vec<Vec<usize>> = examples.into_iter().map(|e| e.tokens).collect();
    let mut run = Run::start("benchmark", args, Some(&args.out))?;
    run.seed("seed", args.seed);
    run.input(&args.model)?;
    run.input(&args.dataset)?;

    let opts = BenchmarkOptions {
        target: match args.target {
            TargetArg::PredictedLogit => BenchmarkTarget::PredictedLogit,
            TargetArg::PredictedMargin => BenchmarkTarget::PredictedMargin,
        },
        seed: args.seed,
        explain: ExplainOptions {
            rollout_residual: args.rollout_residual,
            flow_max_len: args.flow_max_len,
            seed: args.seed,
        },
        pruning_metric: match args.pruning_metric {
            PruningArg::PredictedLogit => PruningMetric::PredictedLogit,
            PruningArg::LogitVector => PruningMetric::LogitVector,
        },
        dataset_id: args.dataset.display().to_string(),
        ..Default::default()
    };
    let table = run_benchmark(&model, &seqs, &args.methods, &opts)?;
    run.write("table.csv", table.to_csv())?;
    run.write_json("table.json", &table)?;
    curve_svgs(&mut run, &table)?;
    run.finish()?;

    let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_owned(), |x| format!("{x:.p$}"));
    println!("{:>10} {:>8} {:>10} {:>12}", "method", "auac", "aumse", "time_s");
    for r in &table.rows {
        println!(
            "{:>10} {:>8} {:>10} {:>12}",
            r.method.to_string(),
            fmt(r.auac, 4),
            fmt(r.aumse, 4),
            r.mean_time_s.map_or("-".to_owned(), |t| format!("{t:.3e}")),
        );
        if let Some(reason) = &r.missing_reason {
            eprintln!("{}: {} of {} examples skipped: {reason}", r.method, r.missing, table.n_examples);
        }
    }
    Ok(())
}
