//! Perturbation benchmarks.
//!
//! The activation task starts from an all-UNK input and restores tokens in
//! order of decreasing relevance, tracking the probability of the class
//! predicted on the full input. The pruning task replaces tokens by UNK in
//! order of increasing absolute relevance, tracking the squared change of the
//! logit. Positions are kept in both tasks: only the token id changes. Ties
//! go to the lower token index. Areas use the trapezoid rule over fractions
//! `0, 1/N, ..., 1`.

mod benchmark;

pub use benchmark::{
    run_benchmark, BenchmarkOptions, BenchmarkTable, BenchmarkTarget, Cell, MeanCurve, MethodRow,
};

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::data::{Example, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::relevance::{explain, ExplainOptions, Explanation, ExplanationTarget, Method};
use crate::transformer::{argmax, TransformerModel};

/// Anything that maps a token sequence to class logits.
pub trait Classifier: Sync {
    fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>>;

    /// Id used to blank out tokens; `None` when the vocabulary has no UNK.
    fn unk_id(&self) -> Option<usize>;
}

impl Classifier for TransformerModel {
    fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        TransformerModel::logits(self, tokens)
    }

    fn unk_id(&self) -> Option<usize> {
        self.vocab.as_ref()?.iter().position(|t| t == UNK_TOKEN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Activation,
    Pruning,
}

/// Output compared against the unperturbed input in the pruning task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningMetric {
    /// `(y0 − y_t)²` for the logit of the originally predicted class.
    #[default]
    PredictedLogit,
    /// Mean of `(y0 − y_t)²` over all logits.
    LogitVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub task: Task,
    pub method: Method,
    pub example_id: usize,
    /// `(fraction perturbed, metric)`, fractions strictly increasing from 0 to 1.
    pub points: Vec<[f64; 2]>,
    pub area: f64,
}

/// Trapezoid area under `points`, normalized by the covered x-range.
pub fn trapezoid_area(points: &[[f64; 2]]) -> f64 {
    if points.len() < 2 {
        return points.first().map_or(0.0, |p| p[1]);
    }
    let span = points[points.len() - 1][0] - points[0][0];
    let area: f64 = points
        .windows(2)
        .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
        .sum();
    area / span
}

/// Token indices by decreasing relevance, ties to the lower index.
pub fn activation_order(relevances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..relevances.len()).collect();
    order.sort_by(|&a, &b| relevances[b].total_cmp(&relevances[a]).then(a.cmp(&b)));
    order
}

/// Token indices by increasing absolute relevance, ties to the lower index.
pub fn pruning_order(relevances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..relevances.len()).collect();
    order.sort_by(|&a, &b| {
        relevances[a]
            .abs()
            .total_cmp(&relevances[b].abs())
            .then(a.cmp(&b))
    });
    order
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

fn require_unk(model: &impl Classifier) -> Result<usize> {
    model
        .unk_id()
        .ok_or_else(|| Error::Config(format!("vocabulary has no `{UNK_TOKEN}` token")))
}

fn check_lengths(tokens: &[usize], relevances: &[f64]) -> Result<()> {
    if tokens.is_empty() || tokens.len() != relevances.len() {
        return Err(Error::Usage(format!(
            "{} tokens but {} relevances",
            tokens.len(),
            relevances.len()
        )));
    }
    Ok(())
}

/// Activation curve from raw relevances.
pub fn activation_curve_from(
    model: &impl Classifier,
    tokens: &[usize],
    relevances: &[f64],
) -> Result<Vec<[f64; 2]>> {
    check_lengths(tokens, relevances)?;
    let unk = require_unk(model)?;
    let class = argmax(&model.logits(tokens)?);
    let n = tokens.len();
    let mut current = vec![unk; n];
    let mut points = Vec::with_capacity(n + 1);
    points.push([0.0, softmax(&model.logits(&current)?)[class]]);
    for (k, &i) in activation_order(relevances).iter().enumerate() {
        current[i] = tokens[i];
        points.push([(k + 1) as f64 / n as f64, softmax(&model.logits(&current)?)[class]]);
    }
    Ok(points)
}

/// Pruning curve from raw relevances.
pub fn pruning_curve_from(
    model: &impl Classifier,
    tokens: &[usize],
    relevances: &[f64],
    metric: PruningMetric,
) -> Result<Vec<[f64; 2]>> {
    check_lengths(tokens, relevances)?;
    let unk = require_unk(model)?;
    let y0 = model.logits(tokens)?;
    let class = argmax(&y0);
    let distance = |y: &[f64]| match metric {
        PruningMetric::PredictedLogit => (y0[class] - y[class]).powi(2),
        PruningMetric::LogitVector => {
            y0.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y0.len() as f64
        }
    };
    let n = tokens.len();
    let mut current = tokens.to_vec();
    let mut points = Vec::with_capacity(n + 1);
    points.push([0.0, 0.0]);
    for (k, &i) in pruning_order(relevances).iter().enumerate() {
        current[i] = unk;
        points.push([(k + 1) as f64 / n as f64, distance(&model.logits(&current)?)]);
    }
    Ok(points)
}

pub fn activation_curve(
    model: &impl Classifier,
    explanation: &Explanation,
    example_id: usize,
) -> Result<PerturbationCurve> {
    let points = activation_curve_from(model, &explanation.tokens, &explanation.token_relevances)?;
    Ok(PerturbationCurve {
        task: Task::Activation,
        method: explanation.method,
        example_id,
        area: trapezoid_area(&points),
        points,
    })
}

pub fn pruning_curve(
    model: &impl Classifier,
    explanation: &Explanation,
    example_id: usize,
    metric: PruningMetric,
) -> Result<PerturbationCurve> {
    let points =
        pruning_curve_from(model, &explanation.tokens, &explanation.token_relevances, metric)?;
    Ok(PerturbationCurve {
        task: Task::Pruning,
        method: explanation.method,
        example_id,
        area: trapezoid_area(&points),
        points,
    })
}

/// Outcome of the planted-keyword check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSanity {
    /// Correct examples whose keyword positions outscore the filler on average.
    pub passed: usize,
    /// Correctly classified examples with recorded keyword positions.
    pub total: usize,
}

impl KeywordSanity {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }
}

/// Compares mean relevance of planted keyword positions with mean relevance
/// of the remaining positions, explaining the predicted class of every
/// correctly classified example. Examples without filler count as passed.
pub fn keyword_sanity(
    model: &TransformerModel,
    examples: &[Example],
    method: Method,
    opts: &ExplainOptions,
) -> Result<KeywordSanity> {
    let outcomes = examples
        .par_iter()
        .map(|ex| {
            let Some(keywords) = ex.keywords.as_ref() else {
                return Ok(None);
            };
            let logits = model.logits(&ex.tokens)?;
            if argmax(&logits) != ex.label {
                return Ok(None);
            }
            let target = ExplanationTarget::Logit { class: ex.label };
            let e = explain(model, &ex.tokens, method, target, opts)?;
            let (mut kw, mut filler) = ((0.0, 0usize), (0.0, 0usize));
            for (i, r) in e.token_relevances.iter().enumerate() {
                let slot = if keywords.contains(&i) { &mut kw } else { &mut filler };
                slot.0 += r;
                slot.1 += 1;
            }
            let pass = filler.1 == 0
                || (kw.1 > 0 && kw.0 / kw.1 as f64 > filler.0 / filler.1 as f64);
            Ok(Some(pass))
        })
        .collect::<Result<Vec<_>>>()?;
    let checked: Vec<bool> = outcomes.into_iter().flatten().collect();
    Ok(KeywordSanity {
        passed: checked.iter().filter(|&&p| p).count(),
        total: checked.len(),
    })
}

#[cfg(test)]
mod tests;
