//! JSON Lines datasets.
//!
//! ```text
//! {"vocab": ["<unk>", "good", ...], "meta": {"generator": "...", "n_classes": 2, ...}}
//! {"tokens": [4, 17, 2], "label": 1, "keywords": [2]}
//! {"tokens": ["good", "w9"], "label": 1}
//! ```
//!
//! The header line is optional. Tokens may be ids or strings; strings are
//! resolved through the vocabulary and unknown strings map to UNK.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Dataset, DatasetMeta, Example, Vocab};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(untagged)]
enum RawToken {
    Id(usize),
    Word(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExample {
    tokens: Vec<RawToken>,
    label: usize,
    #[serde(default)]
    keywords: Option<Vec<usize>>,
}

#[derive(Deserialize)]
struct Header {
    vocab: Vec<String>,
    meta: Option<DatasetMeta>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset_with_vocab(path, None)
}

/// Loads a dataset, resolving string tokens through `vocab` when given
/// (it takes precedence over a header vocabulary).
pub fn load_dataset_with_vocab(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, detail: String| Error::format(path, format!("line {line}"), detail);

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let mut header_vocab = None;
    let mut meta = None;
    if let Some(&(no, first)) = lines.peek() {
        let value: Value = serde_json::from_str(first).map_err(|e| bad(no, e.to_string()))?;
        if value.get("vocab").is_some() {
            let h: Header = serde_json::from_value(value).map_err(|e| bad(no, e.to_string()))?;
            header_vocab = Some(Vocab::new(h.vocab).map_err(|e| bad(no, e.to_string()))?);
            meta = h.meta;
            lines.next();
        }
    }
    let vocab_ref = vocab.or(header_vocab.as_ref());

    let mut examples = Vec::new();
    let mut max_id = 0;
    let mut max_label = 0;
    for (no, line) in lines {
        let raw: RawExample = serde_json::from_str(line).map_err(|e| bad(no, e.to_string()))?;
        let tokens = raw
            .tokens
            .into_iter()
            .map(|t| match t {
                RawToken::Id(id) => Ok(id),
                RawToken::Word(w) => vocab_ref
                    .map(|v| v.id(&w))
                    .ok_or_else(|| bad(no, format!("string token `{w}` but no vocabulary"))),
            })
            .collect::<Result<Vec<usize>>>()?;
        if tokens.is_empty() {
            return Err(bad(no, "empty token list".into()));
        }
        if let Some(k) = raw.keywords.as_ref().and_then(|k| k.iter().find(|&&p| p >= tokens.len())) {
            return Err(bad(no, format!("keyword position {k} beyond sequence length")));
        }
        max_id = max_id.max(*tokens.iter().max().expect("non-empty"));
        max_label = max_label.max(raw.label);
        examples.push(Example {
            tokens,
            label: raw.label,
            keywords: raw.keywords,
        });
    }

    let vocab = match (vocab, header_vocab) {
        (Some(v), _) => v.clone(),
        (None, Some(v)) => v,
        (None, None) => Vocab::generic(max_id + 1),
    };
    let meta = meta.unwrap_or_else(|| DatasetMeta {
        generator: "file".into(),
        seed: None,
        n_classes: (max_label + 1).max(2),
        splits: None,
    });
    let dataset = Dataset {
        vocab,
        examples,
        meta,
    };
    dataset
        .validate()
        .map_err(|e| Error::format(path, "examples", e.to_string()))?;
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header = json!({ "vocab": dataset.vocab.tokens(), "meta": dataset.meta });
    let _ = writeln!(out, "{header}");
    for e in &dataset.examples {
        let line = serde_json::to_string(e).expect("example serializes");
        let _ = writeln!(out, "{line}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
