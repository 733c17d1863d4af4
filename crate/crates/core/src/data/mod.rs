//! Datasets, the synthetic keyword-sentiment task and training.

mod jsonl;
mod keyword;
mod train;

pub use jsonl::{load_dataset, load_dataset_with_vocab, save_dataset};
pub use keyword::{gen_keyword_sentiment, KEYWORD_GENERATOR};
pub use train::{evaluate, train, EpochMetrics, Evaluation, TrainConfig, TrainTrace};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Bidirectional token string ↔ id map containing [`UNK_TOKEN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        let unk = *index
            .get(UNK_TOKEN)
            .ok_or_else(|| Error::Config(format!("vocabulary has no `{UNK_TOKEN}` entry")))?;
        Ok(Self { tokens, index, unk })
    }

    /// `<unk>, t1, t2, ...` for id-only data.
    pub fn generic(size: usize) -> Self {
        let tokens = (0..size.max(1))
            .map(|i| if i == 0 { UNK_TOKEN.to_owned() } else { format!("t{i}") })
            .collect();
        Self::new(tokens).expect("generic vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    /// Id of `token`, or the UNK id for strings outside the vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_owned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
    /// Positions of planted class-indicative tokens, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_classes: usize,
    /// `[train, validation, test]` sizes when the file is a concatenation of splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub examples: Vec<Example>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes
    }

    pub fn token_sequences(&self) -> Vec<Vec<usize>> {
        self.examples.iter().map(|e| e.tokens.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.examples.iter().enumerate() {
            if e.label >= self.meta.n_classes {
                return Err(Error::Input(format!(
                    "example {i}: label {} out of range for {} classes",
                    e.label, self.meta.n_classes
                )));
            }
            if let Some(t) = e.tokens.iter().find(|&&t| t >= self.vocab.len()) {
                return Err(Error::Input(format!(
                    "example {i}: token id {t} outside vocabulary of {}",
                    self.vocab.len()
                )));
            }
        }
        Ok(())
    }

    fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            vocab: self.vocab.clone(),
            examples: self.examples[range].to_vec(),
            meta: DatasetMeta {
                splits: None,
                ..self.meta.clone()
            },
        }
    }

    /// Contiguous, disjoint `(train, validation, test)` splits.
    ///
    /// Uses the sizes recorded in the metadata when present, otherwise an
    /// 80/10/10 split.
    pub fn splits(&self) -> (Dataset, Dataset, Dataset) {
        let n = self.len();
        let [a, b, _] = match self.meta.splits {
            Some(s) if s.iter().sum::<usize>() == n => s,
            _ => {
                let val = n / 10;
                [n - 2 * val, val, val]
            }
        };
        (
            self.subset(0..a),
            self.subset(a..a + b),
            self.subset(a + b..n),
        )
    }
}
