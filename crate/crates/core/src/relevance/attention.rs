//! Attention-based baselines.
//!
//! Attention matrices here use the usual orientation `A[[j, i]] = p_ij`: row
//! `j` is a query position and holds the weights it puts on each key `i`.
//! With mean pooling the classifier depends on every output row, so the
//! per-token score is the mean over rows; with first-token pooling it is row 0.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::flow::FlowNetwork;
use super::{Explanation, ExplanationTarget, Method};
use crate::error::{Error, Result};
use crate::tensor::Array;
use crate::transformer::{DetachMode, ForwardOptions, Pooling, TransformerModel};

/// Per-layer, per-head attention matrices in `[query, key]` orientation.
pub fn attention_matrices(model: &TransformerModel, tokens: &[usize]) -> Result<Vec<Vec<Array>>> {
    let (g, trace) = model.forward(tokens, ForwardOptions::inference())?;
    Ok(trace
        .layers
        .iter()
        .map(|l| l.heads.iter().map(|h| g.value(h.gates).t().to_owned()).collect())
        .collect())
}

fn head_mean(heads: &[Array]) -> Array {
    let mut acc = heads[0].clone();
    for h in &heads[1..] {
        acc += h;
    }
    acc / heads.len() as f64
}

/// `w I + (1 − w) A`, then each row rescaled to sum to one.
fn with_residual(a: &Array, residual: f64) -> Array {
    let n = a.nrows();
    let mut out = a * (1.0 - residual) + &(Array2::<f64>::eye(n) * residual);
    for mut row in out.rows_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

fn pool_rows(m: &Array, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Mean => m.mean_axis(Axis(0)).expect("non-empty").to_vec(),
        Pooling::First => m.row(0).to_vec(),
    }
}

fn baseline(
    method: Method,
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
    token_relevances: Vec<f64>,
) -> Result<Explanation> {
    target.validate(model.config.n_classes)?;
    Ok(Explanation {
        method,
        target,
        tokens: tokens.to_vec(),
        token_relevances,
        output_score: target.evaluate(&model.logits(tokens)?),
        wall_time_seconds: 0.0,
        seed: None,
    })
}

/// Head-averaged attention of the last layer, aggregated over query rows.
pub fn explain_attention_last(
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
) -> Result<Explanation> {
    let layers = attention_matrices(model, tokens)?;
    let last = head_mean(layers.last().expect("n_layers >= 1"));
    let scores = pool_rows(&last, model.config.pooling);
    baseline(Method::ALast, model, tokens, target, scores)
}

/// `Ã_L ⋯ Ã_1` for head-averaged attentions given first layer first.
pub fn rollout_matrix(layer_attention: &[Array], residual: f64) -> Array {
    let n = layer_attention[0].nrows();
    let mut acc = Array2::eye(n);
    for a in layer_attention {
        acc = with_residual(a, residual).dot(&acc);
    }
    acc
}

pub fn explain_rollout(
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
    residual: f64,
) -> Result<Explanation> {
    let layers = attention_matrices(model, tokens)?;
    let means: Vec<Array> = layers.iter().map(|h| head_mean(h)).collect();
    let r = rollout_matrix(&means, residual);
    baseline(Method::Rollout, model, tokens, target, pool_rows(&r, model.config.pooling))
}

/// `F[[j, i]]` = max-flow from output position `j` to input position `i`
/// through the layered graph whose edge capacities are the entries of `Ã_l`.
pub fn attention_flow_matrix(layer_attention: &[Array], residual: f64) -> Array {
    let n = layer_attention[0].nrows();
    let depth = layer_attention.len();
    let mut net = FlowNetwork::new((depth + 1) * n);
    for (l, a) in layer_attention.iter().enumerate() {
        let a = with_residual(a, residual);
        // Layer `l + 1` nodes draw on layer `l` nodes.
        for j in 0..n {
            for i in 0..n {
                if a[[j, i]] > 0.0 {
                    net.add_edge((l + 1) * n + j, l * n + i, a[[j, i]]);
                }
            }
        }
    }
    Array2::from_shape_fn((n, n), |(j, i)| net.max_flow(depth * n + j, i))
}

pub fn explain_attention_flow(
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
    residual: f64,
    max_len: usize,
) -> Result<Explanation> {
    if tokens.len() > max_len {
        return Err(Error::Refused(format!(
            "attention flow on {} tokens exceeds the length cap {max_len}: it solves one \
             max-flow problem per (output, input) pair, which is slow on long inputs",
            tokens.len()
        )));
    }
    let layers = attention_matrices(model, tokens)?;
    let means: Vec<Array> = layers.iter().map(|h| head_mean(h)).collect();
    let f = attention_flow_matrix(&means, residual);
    baseline(Method::AFlow, model, tokens, target, pool_rows(&f, model.config.pooling))
}

/// Gradient-weighted attention rollout: `R ← R + mean_h (A ⊙ ∂f/∂A)⁺ R`
/// layer by layer, starting from `R = I`; the score comes from `R − I`.
pub fn explain_gae(
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
) -> Result<Explanation> {
    target.validate(model.config.n_classes)?;
    let (mut g, trace) = model.forward(tokens, ForwardOptions::explain(DetachMode::None))?;
    let f = target.build(&mut g, trace.logits)?;
    let grads = g.backward(f)?;
    let n = tokens.len();
    let mut r = Array2::<f64>::eye(n);
    for layer in &trace.layers {
        let weighted: Vec<Array> = layer
            .heads
            .iter()
            .map(|h| {
                let a = g.value(h.gates);
                let da = grads.wrt(h.gates);
                (a * &da).mapv(|v| v.max(0.0)).t().to_owned()
            })
            .collect();
        let abar = head_mean(&weighted);
        r = &r + &abar.dot(&r);
    }
    r -= &Array2::eye(n);
    Ok(Explanation {
        method: Method::Gae,
        target,
        tokens: tokens.to_vec(),
        token_relevances: pool_rows(&r, model.config.pooling),
        output_score: g.scalar(f),
        wall_time_seconds: 0.0,
        seed: None,
    })
}

/// Uniform scores in `[0, 1)`; the evaluation floor.
///
/// The target is left as the predicted-class placeholder `logit:0`; callers
/// that know the model fill in `target` and `output_score`.
pub fn explain_random(tokens: &[usize], seed: u64) -> Explanation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Explanation {
        method: Method::Random,
        target: ExplanationTarget::Logit { class: 0 },
        tokens: tokens.to_vec(),
        token_relevances: tokens.iter().map(|_| rng.random::<f64>()).collect(),
        output_score: 0.0,
        wall_time_seconds: 0.0,
        seed: Some(seed),
    }
}
