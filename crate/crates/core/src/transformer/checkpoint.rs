//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "tlrp-checkpoint",
//!   "version": 1,
//!   "config": { "vocab_size": 11, "d_model": 8, ... },
//!   "seed": 7,
//!   "vocab": ["<unk>", "good", ...] | null,
//!   "params": [ { "name": "embedding", "shape": [11, 8], "values": [...] }, ... ]
//! }
//! ```
//!
//! Values are row-major `f64`. Numbers are written with the shortest
//! representation that parses back to the identical bit pattern, so a
//! save/load round trip is exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde_json::{json, Map, Value};

use super::{ModelConfig, ParamLayout, TransformerModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tlrp-checkpoint";
pub const CHECKPOINT_VERSION: u64 = 1;

pub fn save(model: &TransformerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let params: Vec<Value> = model
        .named_params()
        .map(|(name, arr)| {
            json!({
                "name": name,
                "shape": [arr.nrows(), arr.ncols()],
                "values": arr.iter().copied().collect::<Vec<f64>>(),
            })
        })
        .collect();
    let doc = json!({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config,
        "seed": model.seed,
        "vocab": model.vocab,
        "params": params,
    });
    let mut text = serde_json::to_string(&doc).expect("checkpoint serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<TransformerModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |field: &str, detail: String| Error::format(path, field, detail);

    let doc: Value =
        serde_json::from_str(&text).map_err(|e| bad("<document>", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| bad("<document>", "expected a JSON object".into()))?;
    let field = |name: &str| -> Result<&Value> {
        obj.get(name)
            .ok_or_else(|| bad(name, "missing".into()))
    };

    if field("format")?.as_str() != Some(CHECKPOINT_FORMAT) {
        return Err(bad("format", format!("expected \"{CHECKPOINT_FORMAT}\"")));
    }
    match field("version")?.as_u64() {
        Some(CHECKPOINT_VERSION) => {}
        other => return Err(bad("version", format!("unsupported version {other:?}"))),
    }
    let config: ModelConfig = serde_json::from_value(field("config")?.clone())
        .map_err(|e| bad("config", e.to_string()))?;
    config
        .validate()
        .map_err(|e| bad("config", e.to_string()))?;
    let seed = field("seed")?
        .as_u64()
        .ok_or_else(|| bad("seed", "expected an unsigned integer".into()))?;
    let vocab = match obj.get("vocab") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| bad(&format!("vocab[{i}]"), "expected a string".into()))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => return Err(bad("vocab", "expected an array of strings or null".into())),
    };

    let entries = field("params")?
        .as_array()
        .ok_or_else(|| bad("params", "expected an array".into()))?;
    let mut by_name: HashMap<&str, &Map<String, Value>> = HashMap::new();
    for (i, entry) in entries.iter().enumerate() {
        let entry = entry
            .as_object()
            .ok_or_else(|| bad(&format!("params[{i}]"), "expected an object".into()))?;
        let name = entry
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| bad(&format!("params[{i}].name"), "expected a string".into()))?;
        if by_name.insert(name, entry).is_some() {
            return Err(bad(&format!("params.{name}"), "duplicate parameter".into()));
        }
    }

    let layout = ParamLayout::new(&config);
    if let Some(extra) = by_name.keys().find(|n| layout.index_of(n).is_none()) {
        return Err(bad(
            &format!("params.{extra}"),
            "not a parameter of this configuration".into(),
        ));
    }
    let mut params = Vec::with_capacity(layout.len());
    for (name, &(rows, cols)) in layout.names.iter().zip(&layout.shapes) {
        let at = format!("params.{name}");
        let entry = by_name.get(name.as_str()).ok_or_else(|| bad(&at, "missing".into()))?;
        let shape: Vec<u64> = entry
            .get("shape")
            .and_then(Value::as_array)
            .map(|s| s.iter().filter_map(Value::as_u64).collect())
            .unwrap_or_default();
        if shape != [rows as u64, cols as u64] {
            return Err(bad(
                &format!("{at}.shape"),
                format!("expected [{rows}, {cols}], found {shape:?}"),
            ));
        }
        let raw = entry
            .get("values")
            .and_then(Value::as_array)
            .ok_or_else(|| bad(&format!("{at}.values"), "expected an array".into()))?;
        if raw.len() != rows * cols {
            return Err(bad(
                &format!("{at}.values"),
                format!("expected {} values, found {}", rows * cols, raw.len()),
            ));
        }
        let values = raw
            .iter()
            .enumerate()
            .map(|(k, v)| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(&format!("{at}.values[{k}]"), "expected a finite number".into()))
            })
            .collect::<Result<Vec<f64>>>()?;
        params.push(Array2::from_shape_vec((rows, cols), values).expect("length checked"));
    }
    Ok(TransformerModel::from_parts(config, seed, vocab, params))
}
