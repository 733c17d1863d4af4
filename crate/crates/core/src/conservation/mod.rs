//! Conservation diagnostics.
//!
//! Global checks compare the explained output `f` with the relevance sum
//! `ΣR` over input tokens. Component checks read relevances `x ⊙ ∂f/∂x` at
//! the boundaries of one attention head or one LayerNorm core, from a single
//! backward pass that keeps every intermediate gradient.

use std::fmt::Write as _;

use ndarray::Axis;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::relevance::{self, ExplainOptions, ExplanationTarget, Method};
use crate::tensor::{Array, Graph};
use crate::transformer::{attention_head, DetachMode, ForwardOptions, TransformerModel};

/// Smallest `|f|` used as the denominator of a relative deviation.
pub const DEVIATION_FLOOR: f64 = 1e-12;

/// `|ΣR(y)|` below this makes a LayerNorm ratio meaningless.
pub const DEGENERATE_THRESHOLD: f64 = 1e-12;

pub fn relative_deviation(output_score: f64, relevance_sum: f64) -> f64 {
    (relevance_sum - output_score).abs() / output_score.abs().max(DEVIATION_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationPair {
    pub output_score: f64,
    pub relevance_sum: f64,
}

impl ConservationPair {
    pub fn relative_deviation(&self) -> f64 {
        relative_deviation(self.output_score, self.relevance_sum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationReport {
    pub method: Method,
    pub pairs: Vec<ConservationPair>,
    pub mean_relative_deviation: f64,
    /// `None` when either coordinate is constant.
    pub pearson: Option<f64>,
}

impl ConservationReport {
    pub fn from_pairs(method: Method, pairs: Vec<ConservationPair>) -> Self {
        let n = pairs.len().max(1) as f64;
        let mean_relative_deviation =
            pairs.iter().map(ConservationPair::relative_deviation).sum::<f64>() / n;
        let xs: Vec<f64> = pairs.iter().map(|p| p.output_score).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.relevance_sum).collect();
        Self {
            method,
            pearson: pearson(&xs, &ys),
            pairs,
            mean_relative_deviation,
        }
    }

    /// `example,output_score,relevance_sum,relative_deviation` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("example,output_score,relevance_sum,relative_deviation\n");
        for (i, p) in self.pairs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{}",
                p.output_score,
                p.relevance_sum,
                p.relative_deviation()
            );
        }
        out
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// One `(f, ΣR)` pair per example, explaining the predicted-class logit.
pub fn check_global(
    model: &TransformerModel,
    dataset: &[Vec<usize>],
    method: Method,
    opts: &ExplainOptions,
) -> Result<ConservationReport> {
    if dataset.is_empty() {
        return Err(Error::Usage("conservation check needs at least one example".into()));
    }
    let pairs = dataset
        .par_iter()
        .map(|tokens| {
            let target = relevance::predicted_logit_target(model, tokens)?;
            let e = relevance::explain(model, tokens, method, target, opts)?;
            Ok(ConservationPair {
                output_score: e.output_score,
                relevance_sum: e.relevance_sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConservationReport::from_pairs(method, pairs))
}

/// Relevance bookkeeping at the boundary of one attention head.
///
/// `x` feeds keys and values, `x'` feeds queries and `y` is the mixed output
/// `Σ_i x_i p_ij` before the value/output projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadCheck {
    pub sum_keys: f64,
    pub sum_queries: f64,
    pub sum_output: f64,
    /// `Σ_j (E_j[(q − E_j q) xᵀ] + E_j[q (x − E_j x)ᵀ]) ∂f/∂y_j`.
    pub correction: f64,
    /// `2 Σ_j E_j[q x]ᵀ ∂f/∂y_j`, equal to `correction` when `E_j[q] = 0`
    /// and `E_j[x] = 0` for every query.
    pub centered_correction: f64,
}

impl HeadCheck {
    /// `ΣR(x) + ΣR(x') − ΣR(y)`; zero when the head conserves relevance.
    pub fn conservation_gap(&self) -> f64 {
        self.sum_keys + self.sum_queries - self.sum_output
    }

    /// Absolute residual of the plain-gradient conservation identity.
    pub fn identity_residual(&self) -> f64 {
        (self.conservation_gap() - self.correction).abs()
    }

    /// Magnitude of the terms entering the identity, used to make residuals relative.
    pub fn scale(&self) -> f64 {
        (self.sum_keys.abs() + self.sum_queries.abs() + self.sum_output.abs() + self.correction.abs())
            .max(DEVIATION_FLOOR)
    }

    pub fn relative_identity_residual(&self) -> f64 {
        self.identity_residual() / self.scale()
    }
}

fn dot(a: &Array, b: &Array) -> f64 {
    (a * b).sum()
}

/// Correction terms from scores `q[[i, j]]`, gates `p[[i, j]]`, inputs `x`
/// (one row per key) and `∂f/∂y` (one row per query).
fn head_corrections(q: &Array, p: &Array, x: &Array, dy: &Array) -> (f64, f64) {
    let (n_keys, n_queries) = q.dim();
    let mut general = 0.0;
    let mut centered = 0.0;
    for j in 0..n_queries {
        let pj = p.column(j);
        let qj = q.column(j);
        let q_mean: f64 = pj.dot(&qj);
        let x_mean = pj.dot(x);
        let dyj = dy.row(j);
        for i in 0..n_keys {
            let xi = x.row(i);
            let x_dy = xi.dot(&dyj);
            let xc_dy = x_dy - x_mean.dot(&dyj);
            general += pj[i] * ((qj[i] - q_mean) * x_dy + qj[i] * xc_dy);
            centered += 2.0 * pj[i] * qj[i] * x_dy;
        }
    }
    (general, centered)
}

/// Head check inside a full model, explaining `target` under `mode`.
pub fn check_attention_head(
    model: &TransformerModel,
    tokens: &[usize],
    layer: usize,
    head: usize,
    target: ExplanationTarget,
    mode: DetachMode,
) -> Result<HeadCheck> {
    let cfg = &model.config;
    if layer >= cfg.n_layers || head >= cfg.n_heads {
        return Err(Error::Usage(format!(
            "head ({layer}, {head}) out of range for {} layers of {} heads",
            cfg.n_layers, cfg.n_heads
        )));
    }
    target.validate(cfg.n_classes)?;
    let (mut g, trace) = model.forward(tokens, ForwardOptions::explain(mode))?;
    let f = target.build(&mut g, trace.logits)?;
    let grads = g.backward(f)?;
    let h = trace.layers[layer].heads[head];
    let x = g.value(h.keys_in);
    let y = g.value(h.mixed);
    let dy = grads.wrt(h.mixed);
    let (correction, centered_correction) =
        head_corrections(g.value(h.scores), g.value(h.gates), x, &dy);
    Ok(HeadCheck {
        sum_keys: dot(x, &grads.wrt(h.keys_in)),
        sum_queries: dot(g.value(h.queries_in), &grads.wrt(h.queries_in)),
        sum_output: dot(y, &dy),
        correction,
        centered_correction,
    })
}

/// Head check on a standalone head with readout `f = Σ_j ∂f/∂y_j · y_j`.
pub fn check_standalone_head(
    x: &Array,
    x_query: &Array,
    w_k: &Array,
    w_q: &Array,
    dfdy: &Array,
    detach_gates: bool,
) -> Result<HeadCheck> {
    let mut g = Graph::new();
    let xt = g.leaf(x.clone(), true);
    let xq = g.leaf(x_query.clone(), true);
    let (kt, qt) = (g.constant(w_k.clone()), g.constant(w_q.clone()));
    let head = attention_head(&mut g, xt, xq, kt, qt, detach_gates)?;
    let w = g.constant(dfdy.clone());
    let prod = g.mul(head.output, w)?;
    let f = g.sum(prod);
    let grads = g.backward(f)?;
    let (correction, centered_correction) =
        head_corrections(g.value(head.scores), g.value(head.gates), x, dfdy);
    Ok(HeadCheck {
        sum_keys: dot(x, &grads.wrt(xt)),
        sum_queries: dot(x_query, &grads.wrt(xq)),
        sum_output: dot(g.value(head.output), dfdy),
        correction,
        centered_correction,
    })
}

/// One token row at a LayerNorm core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRowCheck {
    /// `ΣR(x)` from the core's vector-Jacobian product in double-double.
    pub sum_input: f64,
    /// `ΣR(x)` from the retained `f64` gradient at the core input.
    pub sum_input_autodiff: f64,
    pub sum_output: f64,
    pub variance: f64,
    /// `ΣR(x) / ΣR(y)`; `None` when `ΣR(y)` is degenerate.
    pub ratio_measured: Option<f64>,
    /// `1 − Var[x] / (eps + Var[x])`.
    pub ratio_predicted: f64,
}

impl NormRowCheck {
    pub fn degenerate(&self) -> bool {
        self.ratio_measured.is_none()
    }

    /// `|measured − predicted| / predicted`.
    pub fn relative_error(&self) -> Option<f64> {
        self.ratio_measured
            .map(|m| (m - self.ratio_predicted).abs() / self.ratio_predicted.abs().max(DEVIATION_FLOOR))
    }

    /// `ΣR(x) − ΣR(y)`.
    pub fn conservation_gap(&self) -> f64 {
        self.sum_input - self.sum_output
    }
}

/// Predicted ratio, computed as `eps / (eps + Var)` to avoid cancellation.
pub fn predicted_norm_ratio(variance: f64, eps: f64) -> f64 {
    eps / (eps + variance)
}

/// LayerNorm check at `ln_index` in network order (`ln1, ln2` per layer).
pub fn check_layernorm(
    model: &TransformerModel,
    tokens: &[usize],
    ln_index: usize,
    target: ExplanationTarget,
    mode: DetachMode,
) -> Result<Vec<NormRowCheck>> {
    let n_norms = 2 * model.config.n_layers;
    if ln_index >= n_norms {
        return Err(Error::Usage(format!(
            "LayerNorm index {ln_index} out of range ({n_norms} norms)"
        )));
    }
    target.validate(model.config.n_classes)?;
    let (mut g, trace) = model.forward(tokens, ForwardOptions::explain(mode))?;
    let f = target.build(&mut g, trace.logits)?;
    let grads = g.backward(f)?;
    let norm = trace.norms()[ln_index];
    Ok(norm_rows(
        g.value(norm.input),
        &grads.wrt(norm.input),
        &grads.wrt(norm.core),
        model.config.eps_ln,
        mode.detach_norm_scale(),
    ))
}

/// LayerNorm check on a standalone core with readout `f = Σ ∂f/∂y ⊙ y`.
pub fn check_standalone_layernorm(
    x: &Array,
    dfdy: &Array,
    eps: f64,
    detach_scale: bool,
) -> Result<Vec<NormRowCheck>> {
    let mut g = Graph::new();
    let xt = g.leaf(x.clone(), true);
    let core = g.layernorm_core(xt, eps, detach_scale)?;
    let w = g.constant(dfdy.clone());
    let prod = g.mul(core, w)?;
    let f = g.sum(prod);
    let grads = g.backward(f)?;
    Ok(norm_rows(x, &grads.wrt(xt), dfdy, eps, detach_scale))
}

fn dd_sum(values: impl Iterator<Item = TwoFloat>) -> TwoFloat {
    values.fold(TwoFloat::from(0.0), |acc, v| acc + v)
}

fn dd_f64(v: TwoFloat) -> f64 {
    v.hi() + v.lo()
}

/// `(ΣR(x), ΣR(y), Var[x])` for one row of a LayerNorm core.
///
/// Near `eps → 0` the input relevance is a tiny difference of `O(1)` terms, so
/// a plain `f64` evaluation loses most of its digits. The vector-Jacobian
/// product `α (g − mean g − y mean(g y))` is therefore replayed here in
/// double-double arithmetic from the same `x` and `∂f/∂y`.
fn norm_row_relevance(x: &[f64], dy: &[f64], eps: f64, detach_scale: bool) -> (f64, f64, f64) {
    let n = TwoFloat::from(x.len() as f64);
    let xs: Vec<TwoFloat> = x.iter().map(|&v| TwoFloat::from(v)).collect();
    let gs: Vec<TwoFloat> = dy.iter().map(|&v| TwoFloat::from(v)).collect();
    let mean = dd_sum(xs.iter().copied()) / n;
    let centered: Vec<TwoFloat> = xs.iter().map(|&v| v - mean).collect();
    let var = dd_sum(centered.iter().map(|&c| c * c)) / n;
    let alpha = TwoFloat::from(1.0) / (var + eps).sqrt();
    let ys: Vec<TwoFloat> = centered.iter().map(|&c| c * alpha).collect();
    let g_mean = dd_sum(gs.iter().copied()) / n;
    let gy_mean = dd_sum(gs.iter().zip(&ys).map(|(&g, &y)| g * y)) / n;
    let sum_output = dd_sum(gs.iter().zip(&ys).map(|(&g, &y)| g * y));
    let sum_input = dd_sum(xs.iter().zip(gs.iter().zip(&ys)).map(|(&xv, (&g, &y))| {
        let mut gx = g - g_mean;
        if !detach_scale {
            gx -= y * gy_mean;
        }
        xv * gx * alpha
    }));
    (dd_f64(sum_input), dd_f64(sum_output), dd_f64(var))
}

fn norm_rows(x: &Array, dx: &Array, dy: &Array, eps: f64, detach_scale: bool) -> Vec<NormRowCheck> {
    let autodiff = (x * dx).sum_axis(Axis(1));
    x.rows()
        .into_iter()
        .zip(dy.rows())
        .enumerate()
        .map(|(r, (row, grow))| {
            let (sum_input, sum_output, variance) =
                norm_row_relevance(&row.to_vec(), &grow.to_vec(), eps, detach_scale);
            NormRowCheck {
                sum_input,
                sum_input_autodiff: autodiff[r],
                sum_output,
                variance,
                ratio_measured: (sum_output.abs() >= DEGENERATE_THRESHOLD)
                    .then(|| sum_input / sum_output),
                ratio_predicted: predicted_norm_ratio(variance, eps),
            }
        })
        .collect()
}

/// Worst-case component diagnostics over a dataset.
///
/// Identity and ratio errors only apply to plain gradients at the component
/// in question, so they are `None` when that component is detached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub mode: DetachMode,
    pub heads_checked: usize,
    /// Largest `|ΣR(x) + ΣR(x') − ΣR(y)|` relative to the head's term scale.
    pub max_head_relative_gap: f64,
    pub max_head_relative_identity_residual: Option<f64>,
    pub norm_rows_checked: usize,
    pub norm_rows_degenerate: usize,
    /// Largest `|ΣR(x) − ΣR(y)| / (|ΣR(x)| + |ΣR(y)|)` over LayerNorm rows.
    pub max_norm_relative_gap: f64,
    pub max_norm_ratio_relative_error: Option<f64>,
}

/// Runs every head and LayerNorm check on every example, explaining the
/// predicted-class logit under `mode`.
pub fn check_components(
    model: &TransformerModel,
    dataset: &[Vec<usize>],
    mode: DetachMode,
) -> Result<ComponentSummary> {
    if dataset.is_empty() {
        return Err(Error::Usage("component check needs at least one example".into()));
    }
    let cfg = &model.config;
    let per_example = dataset
        .par_iter()
        .map(|tokens| {
            let target = relevance::predicted_logit_target(model, tokens)?;
            let mut heads = Vec::new();
            for layer in 0..cfg.n_layers {
                for head in 0..cfg.n_heads {
                    heads.push(check_attention_head(model, tokens, layer, head, target, mode)?);
                }
            }
            let mut rows = Vec::new();
            for ln in 0..2 * cfg.n_layers {
                rows.extend(check_layernorm(model, tokens, ln, target, mode)?);
            }
            Ok((heads, rows))
        })
        .collect::<Result<Vec<_>>>()?;

    let heads: Vec<HeadCheck> = per_example.iter().flat_map(|e| e.0.iter().copied()).collect();
    let rows: Vec<NormRowCheck> = per_example.iter().flat_map(|e| e.1.iter().copied()).collect();
    let fmax = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    let norm_gap = |r: &NormRowCheck| {
        r.conservation_gap().abs() / (r.sum_input.abs() + r.sum_output.abs()).max(DEVIATION_FLOOR)
    };
    Ok(ComponentSummary {
        mode,
        heads_checked: heads.len(),
        max_head_relative_gap: fmax(&mut heads.iter().map(|h| h.conservation_gap().abs() / h.scale())),
        max_head_relative_identity_residual: (!mode.detach_gates())
            .then(|| fmax(&mut heads.iter().map(HeadCheck::relative_identity_residual))),
        norm_rows_checked: rows.len(),
        norm_rows_degenerate: rows.iter().filter(|r| r.degenerate()).count(),
        max_norm_relative_gap: fmax(&mut rows.iter().map(norm_gap)),
        max_norm_ratio_relative_error: (!mode.detach_norm_scale())
            .then(|| fmax(&mut rows.iter().filter_map(NormRowCheck::relative_error))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapsePoint {
    pub eps: f64,
    pub ratio: f64,
}

/// Share of relevance that survives a LayerNorm on `x` for each `eps`.
pub fn relevance_collapse_profile(x: &[f64], eps_ladder: &[f64]) -> Vec<CollapsePoint> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let variance = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    eps_ladder
        .iter()
        .map(|&eps| CollapsePoint {
            eps,
            ratio: predicted_norm_ratio(variance, eps),
        })
        .collect()
}

/// `10^-9, 10^-8, ..., 10^3`.
pub fn default_eps_ladder() -> Vec<f64> {
    (-9..=3).map(|k| 10f64.powi(k)).collect()
}

#[cfg(test)]
mod tests;
