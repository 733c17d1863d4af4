use ndarray::Axis;

use super::{Explanation, ExplanationTarget, Method};
use crate::error::{Error, Result};
use crate::tensor::Array;
use crate::transformer::{DetachMode, ForwardOptions, TransformerModel};

/// Columns whose total contribution is smaller than this distribute nothing.
pub const DENOMINATOR_GUARD: f64 = 1e-9;

/// Gradient×Input on the positionally encoded embeddings.
///
/// `mode` selects plain GI (`None`) or one of the LRP variants.
pub fn explain_gradient_x_input(
    model: &TransformerModel,
    tokens: &[usize],
    target: ExplanationTarget,
    mode: DetachMode,
) -> Result<Explanation> {
    target.validate(model.config.n_classes)?;
    let (mut g, trace) = model.forward(tokens, ForwardOptions::explain(mode))?;
    let f = target.build(&mut g, trace.logits)?;
    let grads = g.backward(f)?;
    let x = g.value(trace.input);
    let dx = grads.wrt(trace.input);
    let token_relevances = (x * &dx).sum_axis(Axis(1)).to_vec();
    let method = match mode {
        DetachMode::None => Method::Gi,
        DetachMode::Ah => Method::LrpAh,
        DetachMode::Ln => Method::LrpLn,
        DetachMode::AhLn => Method::LrpAhLn,
    };
    Ok(Explanation {
        method,
        target,
        tokens: tokens.to_vec(),
        token_relevances,
        output_score: g.scalar(f),
        wall_time_seconds: 0.0,
        seed: None,
    })
}

/// Canonical linear-layer rule `R(x_i) = Σ_j z_ij / Σ_i' z_i'j · R(y_j)`.
///
/// `contributions[[i, j]]` is the part of output `j` coming from input `i`.
pub fn lrp_linear_redistribute(contributions: &Array, out_relevance: &[f64]) -> Result<Vec<f64>> {
    let (n_in, n_out) = contributions.dim();
    if out_relevance.len() != n_out {
        return Err(Error::dim(
            "lrp_linear_redistribute",
            format!("{n_out} outputs vs {} relevances", out_relevance.len()),
        ));
    }
    let mut r_in = vec![0.0; n_in];
    for (j, col) in contributions.columns().into_iter().enumerate() {
        let total: f64 = col.sum();
        if total.abs() < DENOMINATOR_GUARD {
            continue;
        }
        let share = out_relevance[j] / total;
        for (r, &z) in r_in.iter_mut().zip(col.iter()) {
            *r += z * share;
        }
    }
    Ok(r_in)
}
