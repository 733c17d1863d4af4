use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use tlrp_core::data::UNK_TOKEN;
use tlrp_core::relevance::predicted_logit_target;
use tlrp_core::{explain, ExplainOptions, Explanation, ExplanationTarget, Method, TransformerModel};

use super::load_model;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::render::explanation_html;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Html,
}

/// Explain one input with one method.
#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Whitespace-separated tokens; words outside the vocabulary become UNK.
    /// Without a model vocabulary, tokens are integer ids.
    #[arg(long, allow_hyphen_values = true)]
    pub input: String,
    #[arg(long, default_value = "lrp-ah-ln")]
    pub method: Method,
    /// `logit:C`, `logit-diff:P,N` or `log-prob:C`; defaults to the predicted logit.
    #[arg(long)]
    pub target: Option<ExplanationTarget>,
    /// Seed for the random baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Output directory; without it the result goes to stdout.
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub flow_max_len: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rollout_residual: f64,
}

/// JSON record: the explanation plus the token strings.
#[derive(Debug, Serialize)]
pub struct ExplanationRecord<'a> {
    #[serde(flatten)]
    pub explanation: &'a Explanation,
    pub words: &'a [String],
}

/// Token ids and display words for `input`.
pub fn encode_input(model: &TransformerModel, input: &str) -> CliResult<(Vec<usize>, Vec<String>)> {
    let words: Vec<String> = input.split_whitespace().map(str::to_owned).collect();
    if words.is_empty() {
        return Err(CliError::Usage("--input has no tokens".into()));
    }
    let ids = match &model.vocab {
        Some(vocab) => {
            let unk = vocab.iter().position(|t| t == UNK_TOKEN);
            words
                .iter()
                .map(|w| match vocab.iter().position(|t| t == w) {
                    Some(id) => Ok(id),
                    None => {
                        eprintln!("note: `{w}` is not in the vocabulary, using {UNK_TOKEN}");
                        unk.ok_or_else(|| {
                            CliError::Usage(format!("`{w}` is not in the vocabulary and it has no {UNK_TOKEN}"))
                        })
                    }
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        None => words
            .iter()
            .map(|w| {
                w.parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("model has no vocabulary, so `{w}` must be an id")))
            })
            .collect::<CliResult<Vec<_>>>()?,
    };
    Ok((ids, words))
}

pub fn run(args: &ExplainArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let (tokens, words) = encode_input(&model, &args.input)?;
    let mut run = Run::start("explain", args, args.out.as_deref())?;
    run.seed("random", args.seed);
    run.input(&args.model)?;

    let target = match args.target {
        Some(t) => t,
        None => predicted_logit_target(&model, &tokens)?,
    };
    let opts = ExplainOptions {
        rollout_residual: args.rollout_residual,
        flow_max_len: args.flow_max_len,
        seed: args.seed,
    };
    let e = explain(&model, &tokens, args.method, target, &opts)?;
    let (name, body) = match args.format {
        Format::Json => {
            let record = ExplanationRecord {
                explanation: &e,
                words: &words,
            };
            let mut text = serde_json::to_string_pretty(&record).expect("explanation serializes");
            text.push('\n');
            ("explanation.json", text)
        }
        Format::Html => ("explanation.html", explanation_html(&words, &e)),
    };
    if args.out.is_some() {
        let path = run.write(name, body)?;
        run.finish()?;
        println!("wrote {}", path.display());
    } else {
        print!("{body}");
    }
    Ok(())
}
