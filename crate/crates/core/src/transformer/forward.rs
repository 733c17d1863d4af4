use ndarray::{Array2, Axis};

use super::{Activation, DetachMode, ModelConfig, Pooling, TransformerModel};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub mode: DetachMode,
    /// Track gradients w.r.t. the positionally encoded input embeddings.
    pub track_input: bool,
    /// Track gradients w.r.t. every parameter (training, gradient checks).
    pub track_params: bool,
}

impl ForwardOptions {
    /// Gradients w.r.t. the input embeddings only, as needed for explanations.
    pub fn explain(mode: DetachMode) -> Self {
        Self {
            mode,
            track_input: true,
            track_params: false,
        }
    }

    pub fn training() -> Self {
        Self {
            mode: DetachMode::None,
            track_input: false,
            track_params: true,
        }
    }

    /// Values only.
    pub fn inference() -> Self {
        Self::default()
    }
}

/// Nodes of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct AttentionHead {
    /// `q_ij = x_iᵀ W_K W_Qᵀ x'_j / sqrt(d_k)`, indexed `[key i, query j]`.
    pub scores: Tensor,
    /// `p_ij`, softmax over keys `i`: every column sums to one.
    pub gates: Tensor,
    /// `y_j = Σ_i x_i p_ij`, one row per query.
    pub output: Tensor,
}

/// Single attention head without value projection: `y_j = Σ_i x_i p_ij`.
///
/// `x` supplies keys and values, `x_query` the queries. With `detach_gates`
/// the gates are constants in backward, which realizes the AH-rule.
pub fn attention_head(
    g: &mut Graph,
    x: Tensor,
    x_query: Tensor,
    w_k: Tensor,
    w_q: Tensor,
    detach_gates: bool,
) -> Result<AttentionHead> {
    let (_, dx) = g.shape(x);
    let (_, dq) = g.shape(x_query);
    if dx != dq {
        return Err(Error::dim(
            "attention_head",
            format!("key width {dx} vs query width {dq}"),
        ));
    }
    if g.shape(w_k) != g.shape(w_q) {
        return Err(Error::dim(
            "attention_head",
            format!("W_K {:?} vs W_Q {:?}", g.shape(w_k), g.shape(w_q)),
        ));
    }
    let d_k = g.shape(w_k).1 as f64;
    let keys = g.matmul(x, w_k)?;
    let queries = g.matmul(x_query, w_q)?;
    let queries_t = g.transpose(queries);
    let raw = g.matmul(keys, queries_t)?;
    let scores = g.scale(raw, 1.0 / d_k.sqrt());
    let gates = g.softmax(scores, Axis(0));
    let used = if detach_gates { g.detach(gates) } else { gates };
    let used_t = g.transpose(used);
    let output = g.matmul(used_t, x)?;
    Ok(AttentionHead {
        scores,
        gates,
        output,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    /// Private copy of the layer input feeding keys and values of this head.
    pub keys_in: Tensor,
    /// Private copy of the layer input feeding queries of this head.
    pub queries_in: Tensor,
    pub scores: Tensor,
    pub gates: Tensor,
    /// `Σ_i x_i p_ij` before the value/output projections.
    pub mixed: Tensor,
    /// Head contribution after `W_V W_O`.
    pub output: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct NormTrace {
    /// Input of the normalization core (after the residual add).
    pub input: Tensor,
    /// `(x − E[x]) / sqrt(eps + Var[x])`.
    pub core: Tensor,
    /// After the affine `γ ⊙ core + β`.
    pub output: Tensor,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub heads: Vec<HeadTrace>,
    pub ln1: NormTrace,
    pub ln2: NormTrace,
}

/// Handles to the interesting nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Positionally encoded input embeddings, one row per token.
    pub input: Tensor,
    pub layers: Vec<LayerTrace>,
    pub pooled: Tensor,
    /// `1 × n_classes`.
    pub logits: Tensor,
    /// Parameter leaves in layout order.
    pub params: Vec<Tensor>,
}

impl Trace {
    /// LayerNorm traces in network order: `ln1, ln2` of layer 0, then layer 1, ...
    pub fn norms(&self) -> Vec<NormTrace> {
        self.layers.iter().flat_map(|l| [l.ln1, l.ln2]).collect()
    }
}

impl TransformerModel {
    pub(crate) fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(Error::Input(format!(
                "sequence length {} exceeds max_seq_len {}",
                tokens.len(),
                cfg.max_seq_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "unknown token id {bad} (vocab_size {})",
                cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Runs the network on `tokens`, recording a fresh graph.
    pub fn forward(&self, tokens: &[usize], opts: ForwardOptions) -> Result<(Graph, Trace)> {
        self.check_tokens(tokens)?;
        let cfg: &ModelConfig = &self.config;
        let layout = self.layout();
        let mut g = Graph::new();

        let params: Vec<Tensor> = self
            .params()
            .iter()
            .map(|p| g.leaf(p.clone(), opts.track_params))
            .collect();
        let n = tokens.len();
        let positions: Vec<usize> = (0..n).collect();

        let input = if opts.track_params {
            let emb = g.gather(params[layout.embedding], tokens)?;
            let pos = match layout.positional {
                Some(p) => g.gather(params[p], &positions)?,
                None => g.constant(Self::sinusoidal_positions(n, cfg.d_model)),
            };
            g.add(emb, pos)?
        } else {
            let table = &self.params()[layout.embedding];
            let mut x = Array2::zeros((n, cfg.d_model));
            for (r, &t) in tokens.iter().enumerate() {
                x.row_mut(r).assign(&table.row(t));
            }
            match layout.positional {
                Some(p) => {
                    let pos = &self.params()[p];
                    for r in 0..n {
                        let mut row = x.row_mut(r);
                        row += &pos.row(r);
                    }
                }
                None => x += &Self::sinusoidal_positions(n, cfg.d_model),
            }
            g.leaf(x, opts.track_input)
        };

        let detach_gates = opts.mode.detach_gates();
        let detach_scale = opts.mode.detach_norm_scale();
        let mut x = input;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for li in &layout.layers {
            let mut heads = Vec::with_capacity(li.heads.len());
            let mut attn: Option<Tensor> = None;
            for hi in &li.heads {
                let keys_in = g.identity(x);
                let queries_in = g.identity(x);
                let head = attention_head(
                    &mut g,
                    keys_in,
                    queries_in,
                    params[hi.w_k],
                    params[hi.w_q],
                    detach_gates,
                )?;
                let v = g.matmul(head.output, params[hi.w_v])?;
                let output = g.matmul(v, params[hi.w_o])?;
                attn = Some(match attn {
                    Some(acc) => g.add(acc, output)?,
                    None => output,
                });
                heads.push(HeadTrace {
                    keys_in,
                    queries_in,
                    scores: head.scores,
                    gates: head.gates,
                    mixed: head.output,
                    output,
                });
            }
            let attn = attn.expect("n_heads >= 1");
            let attn = g.add_row(attn, params[li.attn_bias])?;
            let residual = g.add(x, attn)?;
            let ln1 = norm(&mut g, residual, params[li.ln1.gamma], params[li.ln1.beta], cfg.eps_ln, detach_scale)?;

            let h = g.matmul(ln1.output, params[li.ffn_w1])?;
            let h = g.add_row(h, params[li.ffn_b1])?;
            let h = match cfg.activation {
                Activation::Relu => g.relu(h),
                Activation::Gelu => g.gelu(h),
            };
            let f = g.matmul(h, params[li.ffn_w2])?;
            let f = g.add_row(f, params[li.ffn_b2])?;
            let residual = g.add(ln1.output, f)?;
            let ln2 = norm(&mut g, residual, params[li.ln2.gamma], params[li.ln2.beta], cfg.eps_ln, detach_scale)?;
            x = ln2.output;
            layers.push(LayerTrace { heads, ln1, ln2 });
        }

        let pooled = match cfg.pooling {
            Pooling::Mean => g.mean_cols(x),
            Pooling::First => g.gather(x, &[0])?,
        };
        let logits = g.matmul(pooled, params[layout.classifier_w])?;
        let logits = g.add_row(logits, params[layout.classifier_b])?;
        Ok((
            g,
            Trace {
                input,
                layers,
                pooled,
                logits,
                params,
            },
        ))
    }

    /// Class logits without gradient tracking.
    pub fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let (g, trace) = self.forward(tokens, ForwardOptions::inference())?;
        Ok(g.value(trace.logits).iter().copied().collect())
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<usize> {
        Ok(argmax(&self.logits(tokens)?))
    }
}

fn norm(
    g: &mut Graph,
    input: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
    detach_scale: bool,
) -> Result<NormTrace> {
    let core = g.layernorm_core(input, eps, detach_scale)?;
    let scaled = g.mul_row(core, gamma)?;
    let output = g.add_row(scaled, beta)?;
    Ok(NormTrace {
        input,
        core,
        output,
    })
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
