pub mod benchmark;
pub mod collapse;
pub mod conservation;
pub mod explain;
pub mod gen_data;
pub mod train;

use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use tlrp_core::data::{load_dataset_with_vocab, Dataset, Example, Vocab};
use tlrp_core::TransformerModel;

use crate::error::{require_file, CliError, CliResult};

pub fn load_model(path: &Path) -> CliResult<TransformerModel> {
    require_file(path, "model checkpoint")?;
    Ok(tlrp_core::transformer::load(path)?)
}

/// Loads a dataset, resolving string tokens through the model vocabulary.
pub fn load_data(path: &Path, model: Option<&TransformerModel>) -> CliResult<Dataset> {
    require_file(path, "dataset")?;
    let vocab = match model.and_then(|m| m.vocab.clone()) {
        Some(words) => Some(Vocab::new(words)?),
        None => None,
    };
    let data = load_dataset_with_vocab(path, vocab.as_ref())?;
    if let Some(m) = model {
        if let Some(t) = data.examples.iter().flat_map(|e| &e.tokens).find(|&&t| t >= m.config.vocab_size) {
            return Err(CliError::Usage(format!(
                "dataset token id {t} is outside the model vocabulary of {}",
                m.config.vocab_size
            )));
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Validation,
    Test,
    All,
}

/// Examples of `split`, truncated to the first `limit`.
pub fn select(data: &Dataset, split: Split, limit: Option<usize>) -> CliResult<Vec<Example>> {
    let (train, val, test) = data.splits();
    let mut examples = match split {
        Split::Train => train.examples,
        Split::Validation => val.examples,
        Split::Test => test.examples,
        Split::All => data.examples.clone(),
    };
    if let Some(n) = limit {
        examples.truncate(n);
    }
    if examples.is_empty() {
        return Err(CliError::Usage(format!("the {split:?} split has no examples").to_lowercase()));
    }
    Ok(examples)
}
