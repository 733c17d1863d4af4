//! Minibatch training with AdamW.
//!
//! The update per parameter `θ` with batch-mean gradient `g` at step `t` is
//!
//! ```text
//! m ← β1 m + (1 − β1) g          v ← β2 v + (1 − β2) g²
//! m̂ = m / (1 − β1^t)             v̂ = v / (1 − β2^t)
//! θ ← θ − lr (m̂ / (sqrt(v̂) + ε) + λ θ)
//! ```
//!
//! Weight decay `λ` is decoupled from the adaptive step and applies only to
//! weight matrices and embeddings; biases and LayerNorm gains are not decayed.
//! Training runs on one thread and is deterministic for a given seed.

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Array;
use crate::transformer::{argmax, ForwardOptions, TransformerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Seeds the minibatch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 32,
            max_epochs: 20,
            patience: 3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Parameter(
                "adam_eps must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: Evaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial: Evaluation,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (by validation accuracy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean loss and accuracy; examples are scored in parallel and reduced in order.
pub fn evaluate(model: &TransformerModel, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let scored = dataset
        .examples
        .par_iter()
        .map(|e| {
            let logits = model.logits(&e.tokens)?;
            Ok((cross_entropy(&logits, e.label), argmax(&logits) == e.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scored.len() as f64;
    Ok(Evaluation {
        loss: scored.iter().map(|s| s.0).sum::<f64>() / n,
        accuracy: scored.iter().filter(|s| s.1).count() as f64 / n,
    })
}

/// Loss and parameter gradients for one example.
fn example_gradients(model: &TransformerModel, tokens: &[usize], label: usize) -> Result<(f64, Vec<Array>)> {
    let (mut g, trace) = model.forward(tokens, ForwardOptions::training())?;
    let logp = g.log_softmax(trace.logits, Axis(1));
    let picked = g.element(logp, 0, label)?;
    let loss = g.scale(picked, -1.0);
    let grads = g.backward(loss)?;
    Ok((g.scalar(loss), trace.params.iter().map(|&p| grads.wrt(p)).collect()))
}

struct AdamW {
    m: Vec<Array>,
    v: Vec<Array>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    fn new(model: &TransformerModel) -> Self {
        let layout = model.layout();
        Self {
            m: model.params().iter().map(|p| Array::zeros(p.dim())).collect(),
            v: model.params().iter().map(|p| Array::zeros(p.dim())).collect(),
            decay: (0..layout.len())
                .map(|i| !layout.is_bias(i) && !layout.is_norm_gain(i))
                .collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TransformerModel, grads: &[Array], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            let g = &grads[i];
            self.m[i].zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
            self.v[i].zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
            let wd = if self.decay[i] { cfg.weight_decay } else { 0.0 };
            ndarray::Zip::from(p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|theta, &m, &v| {
                    let update = (m / c1) / ((v / c2).sqrt() + cfg.adam_eps) + wd * *theta;
                    *theta -= cfg.lr * update;
                });
        }
    }
}

/// Trains `model` in place with early stopping on validation accuracy.
///
/// With a validation set the parameters of the best epoch are restored at
/// the end. A non-finite batch loss aborts with [`Error::Divergence`].
pub fn train(
    model: &mut TransformerModel,
    train_set: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    for set in std::iter::once(train_set).chain(validation) {
        if set.n_classes() > model.config.n_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model only {}",
                set.n_classes(),
                model.config.n_classes
            )));
        }
        set.validate()?;
    }

    let initial = evaluate(model, train_set)?;
    let mut trace = TrainTrace {
        initial,
        epochs: Vec::new(),
        best_epoch: None,
        stopped_early: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Vec<Array>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut sum: Option<Vec<Array>> = None;
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &train_set.examples[i];
                let (loss, grads) = example_gradients(model, &e.tokens, e.label)?;
                batch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| *a += g),
                }
            }
            let n = batch.len() as f64;
            batch_loss /= n;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            let mut grads = sum.expect("non-empty batch");
            grads.iter_mut().for_each(|g| *g /= n);
            opt.step(model, &grads, cfg);
        }

        let train_eval = evaluate(model, train_set)?;
        let val_eval = validation.map(|v| evaluate(model, v)).transpose()?;
        trace.epochs.push(EpochMetrics {
            epoch,
            train: train_eval,
            validation: val_eval,
        });
        if let Some(val) = val_eval {
            if best.as_ref().is_none_or(|(acc, _)| val.accuracy > *acc) {
                best = Some((val.accuracy, model.params().to_vec()));
                trace.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    trace.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().clone_from_slice(&params);
    }
    Ok(trace)
}
