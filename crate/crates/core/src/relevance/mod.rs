//! Explanation methods.
//!
//! Gradient×Input and the three LRP variants share one code path: the model
//! runs under a [`DetachMode`] and the token relevance is the dot product of
//! each positionally encoded input embedding with the gradient of the target.
//! The attention-based baselines read attention matrices (and, for GAE, their
//! gradients) from a plain forward/backward pass.

mod attention;
mod flow;
mod rules;

pub use attention::{
    attention_flow_matrix, attention_matrices, explain_attention_flow, explain_attention_last,
    explain_gae, explain_random, explain_rollout, rollout_matrix,
};
pub use flow::FlowNetwork;
pub use rules::{explain_gradient_x_input, lrp_linear_redistribute, DENOMINATOR_GUARD};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis, Graph, Tensor};
use crate::transformer::{DetachMode, TransformerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gi,
    LrpAh,
    LrpLn,
    LrpAhLn,
    ALast,
    Rollout,
    AFlow,
    Gae,
    Random,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Random,
        Method::ALast,
        Method::AFlow,
        Method::Rollout,
        Method::Gae,
        Method::Gi,
        Method::LrpAh,
        Method::LrpLn,
        Method::LrpAhLn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gi => "gi",
            Method::LrpAh => "lrp-ah",
            Method::LrpLn => "lrp-ln",
            Method::LrpAhLn => "lrp-ah-ln",
            Method::ALast => "a-last",
            Method::Rollout => "rollout",
            Method::AFlow => "a-flow",
            Method::Gae => "gae",
            Method::Random => "random",
        }
    }

    /// Detach mode for the gradient-based methods.
    pub fn detach_mode(self) -> Option<DetachMode> {
        match self {
            Method::Gi => Some(DetachMode::None),
            Method::LrpAh => Some(DetachMode::Ah),
            Method::LrpLn => Some(DetachMode::Ln),
            Method::LrpAhLn => Some(DetachMode::AhLn),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '+'], "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                let known: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Usage(format!("unknown method `{s}` (known: {})", known.join(", ")))
            })
    }
}

/// The scalar function of the logits that an explanation decomposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExplanationTarget {
    Logit { class: usize },
    LogitDiff { positive: usize, negative: usize },
    LogProb { class: usize },
}

impl ExplanationTarget {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let classes = match *self {
            Self::Logit { class } | Self::LogProb { class } => vec![class],
            Self::LogitDiff { positive, negative } => vec![positive, negative],
        };
        for c in classes {
            if c >= n_classes {
                return Err(Error::Usage(format!(
                    "class {c} out of range for {n_classes} classes"
                )));
            }
        }
        Ok(())
    }

    /// Appends the target scalar to `g`, given `1 × C` logits.
    pub fn build(&self, g: &mut Graph, logits: Tensor) -> Result<Tensor> {
        match *self {
            Self::Logit { class } => g.element(logits, 0, class),
            Self::LogitDiff { positive, negative } => {
                let p = g.element(logits, 0, positive)?;
                let n = g.element(logits, 0, negative)?;
                g.sub(p, n)
            }
            Self::LogProb { class } => {
                let lp = g.log_softmax(logits, Axis(1));
                g.element(lp, 0, class)
            }
        }
    }

    /// Value of the target for a plain logit vector.
    pub fn evaluate(&self, logits: &[f64]) -> f64 {
        match *self {
            Self::Logit { class } => logits[class],
            Self::LogitDiff { positive, negative } => logits[positive] - logits[negative],
            Self::LogProb { class } => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                logits[class] - lse
            }
        }
    }
}

impl fmt::Display for ExplanationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Logit { class } => write!(f, "logit:{class}"),
            Self::LogitDiff { positive, negative } => write!(f, "logit-diff:{positive},{negative}"),
            Self::LogProb { class } => write!(f, "log-prob:{class}"),
        }
    }
}

impl FromStr for ExplanationTarget {
    type Err = Error;

    /// `logit:C`, `logit-diff:P,N` or `log-prob:C`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("cannot parse target `{s}`"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let num = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        match kind.trim() {
            "logit" => Ok(Self::Logit { class: num(rest)? }),
            "log-prob" | "log_prob" => Ok(Self::LogProb { class: num(rest)? }),
            "logit-diff" | "logit_diff" => {
                let (p, n) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::LogitDiff {
                    positive: num(p)?,
                    negative: num(n)?,
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Per-token relevance scores for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub target: ExplanationTarget,
    pub tokens: Vec<usize>,
    #[serde(rename = "relevances")]
    pub token_relevances: Vec<f64>,
    /// Value of the explained function on the unperturbed input.
    pub output_score: f64,
    pub wall_time_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Explanation {
    pub fn relevance_sum(&self) -> f64 {
        self.token_relevances.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainOptions {
    /// Identity weight `w` in `Ã = w I + (1 − w) A` for rollout-style methods.
    pub rollout_residual: f64,
    /// Longest input attention flow accepts.
    pub flow_max_len: usize,
    /// Seed for [`Method::Random`].
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            rollout_residual: 0.5,
            flow_max_len: 32,
            seed: 0,
        }
    }
}

/// Runs `method` and records its wall time.
pub fn explain(
    model: &TransformerModel,
    tokens: &[usize],
    method: Method,
    target: ExplanationTarget,
    opts: &ExplainOptions,
) -> Result<Explanation> {
    target.validate(model.config.n_classes)?;
    let start = Instant::now();
    let mut e = match method {
        Method::Gi | Method::LrpAh | Method::LrpLn | Method::LrpAhLn => {
            let mode = method.detach_mode().expect("gradient method");
            explain_gradient_x_input(model, tokens, target, mode)?
        }
        Method::ALast => explain_attention_last(model, tokens, target)?,
        Method::Rollout => explain_rollout(model, tokens, target, opts.rollout_residual)?,
        Method::AFlow => {
            explain_attention_flow(model, tokens, target, opts.rollout_residual, opts.flow_max_len)?
        }
        Method::Gae => explain_gae(model, tokens, target)?,
        Method::Random => {
            let mut e = explain_random(tokens, opts.seed);
            e.target = target;
            e.output_score = target.evaluate(&model.logits(tokens)?);
            e
        }
    };
    e.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok(e)
}

/// Target on the model's own prediction for `tokens`.
pub fn predicted_logit_target(model: &TransformerModel, tokens: &[usize]) -> Result<ExplanationTarget> {
    Ok(ExplanationTarget::Logit {
        class: model.predict(tokens)?,
    })
}
