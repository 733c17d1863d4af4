use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tlrp_core::conservation::{check_components, check_global, ComponentSummary, ConservationReport};
use tlrp_core::{DetachMode, ExplainOptions, Method};

use super::{load_data, load_model, select, Split};
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::render::scatter_with_diagonal;

pub const REPORT_SCHEMA: &str = "tlrp-conservation/1";

/// Compare output scores with relevance sums and check component identities.
#[derive(Debug, Args, Serialize)]
pub struct ConservationArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "lrp-ah-ln,gi,rollout,a-flow,gae")]
    pub methods: Vec<Method>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Use at most this many examples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub flow_max_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rollout_residual: f64,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum MethodEntry {
    Done {
        #[serde(flatten)]
        report: ConservationReport,
        csv: PathBuf,
        svg: PathBuf,
    },
    Skipped {
        method: Method,
        skipped: String,
    },
}

#[derive(Debug, Serialize)]
struct Report {
    schema: &'static str,
    n_examples: usize,
    methods: Vec<MethodEntry>,
    components: Vec<ComponentSummary>,
}

pub fn run(args: &ConservationArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let data = load_data(&args.dataset, Some(&model))?;
    let examples = select(&data, args.split, args.limit)?;
    let seqs: Vec<Vec<usize>> = examples.into_iter().map(|e| e.tokens).collect();
    let mut run = Run::start("conservation", args, Some(&args.out))?;
    run.input(&args.model)?;
    run.input(&args.dataset)?;

    let opts = ExplainOptions {
        rollout_residual: args.rollout_residual,
        flow_max_len: args.flow_max_len,
        seed: 0,
    };
    let mut methods = Vec::new();
    for &method in &args.methods {
        match check_global(&model, &seqs, method, &opts) {
            Ok(report) => {
                let csv = run.write(&format!("{method}.csv"), report.to_csv())?;
                let points: Vec<[f64; 2]> =
                    report.pairs.iter().map(|p| [p.output_score, p.relevance_sum]).collect();
                let svg = scatter_with_diagonal(&method.to_string(), "output score f", "relevance sum", &points)
                    .map_err(CliError::Runtime)?;
                let svg = run.write(&format!("{method}.svg"), svg)?;
                println!(
                    "{method:>10}  mean relative deviation {:.3e}  pearson {}",
                    report.mean_relative_deviation,
                    report.pearson.map_or("n/a".to_owned(), |r| format!("{r:.4}"))
                );
                methods.push(MethodEntry::Done { report, csv, svg });
            }
            Err(e @ tlrp_core::Error::Refused(_)) => {
                eprintln!("{method}: skipped: {e}");
                methods.push(MethodEntry::Skipped {
                    method,
                    skipped: e.to_string(),
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    let components = [DetachMode::None, DetachMode::AhLn]
        .into_iter()
        .map(|mode| check_components(&model, &seqs, mode))
        .collect::<tlrp_core::Result<Vec<_>>>()?;
    for c in &components {
        println!(
            "{:?}: head gap {:.3e}, head identity residual {}, norm gap {:.3e}, norm ratio error {}",
            c.mode,
            c.max_head_relative_gap,
            c.max_head_relative_identity_residual.map_or("n/a".into(), |v| format!("{v:.3e}")),
            c.max_norm_relative_gap,
            c.max_norm_ratio_relative_error.map_or("n/a".into(), |v| format!("{v:.3e}")),
        );
    }
    run.write_json(
        "report.json",
        &Report {
            schema: REPORT_SCHEMA,
            n_examples: seqs.len(),
            methods,
            components,
        },
    )?;
    run.finish()?;
    Ok(())
}
