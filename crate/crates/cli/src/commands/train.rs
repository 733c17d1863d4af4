use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use tlrp_core::data::{evaluate, train, Evaluation, TrainConfig, TrainTrace};
use tlrp_core::transformer::{save, Activation, Pooling, PositionalEncoding};
use tlrp_core::{ModelConfig, TransformerModel};

use super::load_data;
use crate::error::{io_error, require_file, CliError, CliResult};
use crate::manifest::Run;

/// Model hyperparameters; sizes tied to the data come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Defaults to `2 * d_model`.
    pub d_ff: Option<usize>,
    /// Defaults to the longest sequence in the dataset.
    pub max_seq_len: Option<usize>,
    pub eps_ln: f64,
    pub activation: Activation,
    pub pooling: Pooling,
    pub positional_encoding: PositionalEncoding,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            n_layers: 2,
            d_ff: None,
            max_seq_len: None,
            eps_ln: 1e-6,
            activation: Activation::default(),
            pooling: Pooling::default(),
            positional_encoding: PositionalEncoding::default(),
        }
    }
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

pub const METRICS_SCHEMA: &str = "tlrp-train-metrics/1";

#[derive(Debug, Serialize)]
struct SplitSizes {
    train: usize,
    validation: usize,
    test: usize,
}

#[derive(Debug, Serialize)]
struct FinalMetrics {
    train: Evaluation,
    validation: Option<Evaluation>,
    test: Option<Evaluation>,
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    schema: &'static str,
    seed: u64,
    splits: SplitSizes,
    num_parameters: usize,
    model: &'a ModelConfig,
    train_config: &'a TrainConfig,
    #[serde(flatten)]
    trace: &'a TrainTrace,
    #[serde(rename = "final")]
    final_metrics: FinalMetrics,
}

/// Train a classifier on a JSONL dataset.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// JSONL dataset; its recorded splits give train, validation and test.
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON file with `model` and `train` sections; missing keys take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for `model.json`, `metrics.json` and the manifest.
    #[arg(long, env = "TLRP_OUT_DIR")]
    pub out: PathBuf,
    /// Seeds initialization and batch order; overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_config(args: &TrainArgs) -> CliResult<TrainFile> {
    let Some(path) = args.config.as_ref() else {
        return Ok(TrainFile::default());
    };
    require_file(path, "config")?;
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let mut file = read_config(args)?;
    let data = load_data(&args.dataset, None)?;
    let seed = args.seed.unwrap_or(file.train.seed);
    file.train.seed = seed;

    let mut run = Run::start("train", args, Some(&args.out))?;
    run.seed("seed", seed);
    run.input(&args.dataset)?;
    if let Some(c) = &args.config {
        run.input(c)?;
    }

    let spec = &file.model;
    let longest = data.examples.iter().map(|e| e.tokens.len()).max().unwrap_or(1);
    let mut cfg = ModelConfig::new(data.vocab.len(), spec.d_model, spec.n_heads, spec.n_layers, data.n_classes());
    cfg.d_ff = spec.d_ff.unwrap_or(2 * spec.d_model);
    cfg.max_seq_len = spec.max_seq_len.unwrap_or(longest);
    cfg.eps_ln = spec.eps_ln;
    cfg.activation = spec.activation;
    cfg.pooling = spec.pooling;
    cfg.positional_encoding = spec.positional_encoding;
    let mut model = TransformerModel::init(cfg, seed)?;
    model.vocab = Some(data.vocab.tokens().to_vec());

    let (train_set, val_set, test_set) = data.splits();
    let validation = (!val_set.is_empty()).then_some(&val_set);
    let trace = train(&mut model, &train_set, validation, &file.train)?;
    let final_metrics = FinalMetrics {
        train: evaluate(&model, &train_set)?,
        validation: validation.map(|v| evaluate(&model, v)).transpose()?,
        test: (!test_set.is_empty()).then(|| evaluate(&model, &test_set)).transpose()?,
    };

    let model_path = run.out_path("model.json");
    save(&model, &model_path)?;
    run.record_output(&model_path)?;
    run.write_json("config.json", &file)?;
    let metrics = Metrics {
        schema: METRICS_SCHEMA,
        seed,
        splits: SplitSizes {
            train: train_set.len(),
            validation: val_set.len(),
            test: test_set.len(),
        },
        num_parameters: model.num_parameters(),
        model: &model.config,
        train_config: &file.train,
        trace: &trace,
        final_metrics,
    };
    run.write_json("metrics.json", &metrics)?;
    run.finish()?;

    let acc = |e: Option<Evaluation>| e.map_or("n/a".to_owned(), |e| format!("{:.4}", e.accuracy));
    println!(
        "trained {} epochs (best {}); accuracy train {:.4}, validation {}, test {}",
        trace.epochs.len(),
        trace.best_epoch.map_or("n/a".to_owned(), |b| b.to_string()),
        metrics.final_metrics.train.accuracy,
        acc(metrics.final_metrics.validation),
        acc(metrics.final_metrics.test),
    );
    Ok(())
}
