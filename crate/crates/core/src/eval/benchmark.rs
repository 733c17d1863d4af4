use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{activation_curve, pruning_curve, require_unk, PruningMetric, Task};
use crate::error::{Error, Result};
use crate::relevance::{explain, ExplainOptions, Explanation, ExplanationTarget, Method};
use crate::transformer::TransformerModel;

/// Which scalar the benchmarked explanations decompose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkTarget {
    /// Logit of the predicted class.
    #[default]
    PredictedLogit,
    /// Predicted-class logit minus the runner-up logit.
    PredictedMargin,
}

impl BenchmarkTarget {
    pub fn resolve(self, model: &TransformerModel, tokens: &[usize]) -> Result<ExplanationTarget> {
        let logits = model.logits(tokens)?;
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        Ok(match self {
            Self::PredictedLogit => ExplanationTarget::Logit { class: order[0] },
            Self::PredictedMargin if order.len() > 1 => ExplanationTarget::LogitDiff {
                positive: order[0],
                negative: order[1],
            },
            Self::PredictedMargin => ExplanationTarget::Logit { class: order[0] },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub target: BenchmarkTarget,
    /// Base seed; example `i` explains with seed `seed + i`.
    pub seed: u64,
    pub explain: ExplainOptions,
    pub pruning_metric: PruningMetric,
    pub dataset_id: String,
    /// Number of evenly spaced fractions the mean curves are resampled to.
    pub curve_grid: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            target: BenchmarkTarget::default(),
            seed: 0,
            explain: ExplainOptions::default(),
            pruning_metric: PruningMetric::default(),
            dataset_id: String::new(),
            curve_grid: 21,
        }
    }
}

/// One (method, example) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub example_id: usize,
    pub auac: f64,
    pub aumse: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub auac: Option<f64>,
    pub aumse: Option<f64>,
    pub mean_time_s: Option<f64>,
    pub evaluated: usize,
    pub missing: usize,
    /// First failure message, when any example failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCurve {
    pub method: Method,
    pub task: Task,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub dataset_id: String,
    pub seed: u64,
    pub n_examples: usize,
    pub rows: Vec<MethodRow>,
    pub mean_curves: Vec<MeanCurve>,
    pub cells: Vec<Cell>,
}

impl BenchmarkTable {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// `method,auac,aumse,mean_time_s`; missing values are empty.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("method,auac,aumse,mean_time_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.method,
                fmt(r.auac),
                fmt(r.aumse),
                fmt(r.mean_time_s)
            );
        }
        out
    }
}

/// Linear interpolation of `points` at `x`.
fn sample(points: &[[f64; 2]], x: f64) -> f64 {
    let k = points.partition_point(|p| p[0] < x);
    if k == 0 {
        return points[0][1];
    }
    if k == points.len() {
        return points[k - 1][1];
    }
    let ([x0, y0], [x1, y1]) = (points[k - 1], points[k]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

fn mean_curve(curves: &[&[[f64; 2]]], grid: usize) -> Vec<[f64; 2]> {
    let grid = grid.max(2);
    (0..grid)
        .map(|g| {
            let x = g as f64 / (grid - 1) as f64;
            let y = curves.iter().map(|c| sample(c, x)).sum::<f64>() / curves.len() as f64;
            [x, y]
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Explains every example with every method, then scores both curves.
///
/// Explanations run one at a time so their wall times are not distorted by
/// contention; methods are interleaved per example. Curves are then scored in
/// parallel. A failing (method, example) pair becomes a missing cell.
pub fn run_benchmark(
    model: &TransformerModel,
    dataset: &[Vec<usize>],
    methods: &[Method],
    opts: &BenchmarkOptions,
) -> Result<BenchmarkTable> {
    if dataset.is_empty() {
        return Err(Error::Usage("benchmark needs at least one example".into()));
    }
    require_unk(model)?;

    let mut explained: Vec<Vec<std::result::Result<Explanation, String>>> =
        vec![Vec::with_capacity(dataset.len()); methods.len()];
    for (i, tokens) in dataset.iter().enumerate() {
        let target = opts.target.resolve(model, tokens)?;
        let eopts = ExplainOptions {
            seed: opts.seed.wrapping_add(i as u64),
            ..opts.explain
        };
        for (m, &method) in methods.iter().enumerate() {
            explained[m].push(explain(model, tokens, method, target, &eopts).map_err(|e| e.to_string()));
        }
    }

    type Scored = std::result::Result<(Cell, Vec<[f64; 2]>, Vec<[f64; 2]>), String>;
    let jobs: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..dataset.len()).map(move |i| (m, i)))
        .collect();
    let scored: Vec<Scored> = jobs
        .par_iter()
        .map(|&(m, i)| {
            let e = explained[m][i].as_ref().map_err(Clone::clone)?;
            let act = activation_curve(model, e, i).map_err(|e| e.to_string())?;
            let pru = pruning_curve(model, e, i, opts.pruning_metric).map_err(|e| e.to_string())?;
            let cell = Cell {
                method: methods[m],
                example_id: i,
                auac: act.area,
                aumse: pru.area,
                time_s: e.wall_time_seconds,
            };
            Ok((cell, act.points, pru.points))
        })
        .collect();

    let mut rows = Vec::new();
    let mut mean_curves = Vec::new();
    let mut cells = Vec::new();
    for (m, chunk) in scored.chunks(dataset.len()).enumerate() {
        let ok: Vec<_> = chunk.iter().filter_map(|s| s.as_ref().ok()).collect();
        let missing_reason = chunk.iter().find_map(|s| s.as_ref().err().cloned());
        rows.push(MethodRow {
            method: methods[m],
            auac: mean(ok.iter().map(|s| s.0.auac)),
            aumse: mean(ok.iter().map(|s| s.0.aumse)),
            mean_time_s: mean(ok.iter().map(|s| s.0.time_s)),
            evaluated: ok.len(),
            missing: chunk.len() - ok.len(),
            missing_reason,
        });
        if !ok.is_empty() {
            for (task, pick) in [(Task::Activation, 1), (Task::Pruning, 2)] {
                let curves: Vec<&[[f64; 2]]> = ok
                    .iter()
                    .map(|s| if pick == 1 { s.1.as_slice() } else { s.2.as_slice() })
                    .collect();
                mean_curves.push(MeanCurve {
                    method: methods[m],
                    task,
                    points: mean_curve(&curves, opts.curve_grid),
                });
            }
        }
        cells.extend(ok.iter().map(|s| s.0.clone()));
    }
    Ok(BenchmarkTable {
        dataset_id: opts.dataset_id.clone(),
        seed: opts.seed,
        n_examples: dataset.len(),
        rows,
        mean_curves,
        cells,
    })
}
