use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, PositionalEncoding};
use crate::error::Result;
use crate::tensor::Array;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadIdx {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
    pub w_o: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormIdx {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerIdx {
    pub heads: Vec<HeadIdx>,
    pub attn_bias: usize,
    pub ln1: NormIdx,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub ln2: NormIdx,
}

/// Names, shapes and positions of every parameter array.
///
/// This is the single source of truth for parameter ordering: the model
/// stores its arrays in this order, forward passes bind them in this order,
/// and checkpoints list them in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub shapes: Vec<(usize, usize)>,
    pub embedding: usize,
    pub positional: Option<usize>,
    pub layers: Vec<LayerIdx>,
    pub classifier_w: usize,
    pub classifier_b: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut add = |name: String, shape: (usize, usize)| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let (d, dk, dff) = (config.d_model, config.d_k, config.d_ff);

        let embedding = add("embedding".into(), (config.vocab_size, d));
        let positional = (config.positional_encoding == PositionalEncoding::Learned)
            .then(|| add("positional".into(), (config.max_seq_len, d)));
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("layers.{l}");
                let heads = (0..config.n_heads)
                    .map(|h| HeadIdx {
                        w_q: add(format!("{p}.heads.{h}.w_q"), (d, dk)),
                        w_k: add(format!("{p}.heads.{h}.w_k"), (d, dk)),
                        w_v: add(format!("{p}.heads.{h}.w_v"), (d, dk)),
                        w_o: add(format!("{p}.heads.{h}.w_o"), (dk, d)),
                    })
                    .collect();
                LayerIdx {
                    heads,
                    attn_bias: add(format!("{p}.attn.bias"), (1, d)),
                    ln1: NormIdx {
                        gamma: add(format!("{p}.ln1.gamma"), (1, d)),
                        beta: add(format!("{p}.ln1.beta"), (1, d)),
                    },
                    ffn_w1: add(format!("{p}.ffn.w1"), (d, dff)),
                    ffn_b1: add(format!("{p}.ffn.b1"), (1, dff)),
                    ffn_w2: add(format!("{p}.ffn.w2"), (dff, d)),
                    ffn_b2: add(format!("{p}.ffn.b2"), (1, d)),
                    ln2: NormIdx {
                        gamma: add(format!("{p}.ln2.gamma"), (1, d)),
                        beta: add(format!("{p}.ln2.beta"), (1, d)),
                    },
                }
            })
            .collect();
        let classifier_w = add("classifier.w".into(), (d, config.n_classes));
        let classifier_b = add("classifier.b".into(), (1, config.n_classes));
        Self {
            names,
            shapes,
            embedding,
            positional,
            layers,
            classifier_w,
            classifier_b,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Additive offsets: linear biases and LayerNorm shifts.
    pub fn is_bias(&self, idx: usize) -> bool {
        let name = &self.names[idx];
        name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".b")
            || name.ends_with(".b1") || name.ends_with(".b2")
    }

    pub fn is_norm_gain(&self, idx: usize) -> bool {
        self.names[idx].ends_with(".gamma")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Token strings by id, when the model was trained on a named vocabulary.
    pub vocab: Option<Vec<String>>,
    layout: ParamLayout,
    params: Vec<Array>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array {
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..bound))
}

impl TransformerModel {
    /// Deterministic scaled-uniform initialization.
    ///
    /// Weight matrices draw from `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`;
    /// embeddings from `U(−1, 1)`; biases and shifts start at zero, gains at one.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..layout.len())
            .map(|idx| {
                let shape = layout.shapes[idx];
                if layout.is_bias(idx) {
                    Array2::zeros(shape)
                } else if layout.is_norm_gain(idx) {
                    Array2::ones(shape)
                } else if idx == layout.embedding || Some(idx) == layout.positional {
                    uniform(&mut rng, shape, 1.0)
                } else {
                    let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
                    uniform(&mut rng, shape, bound)
                }
            })
            .collect();
        Ok(Self {
            config,
            seed,
            vocab: None,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        seed: u64,
        vocab: Option<Vec<String>>,
        params: Vec<Array>,
    ) -> Self {
        let layout = ParamLayout::new(&config);
        debug_assert_eq!(layout.len(), params.len());
        Self {
            config,
            seed,
            vocab,
            layout,
            params,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    /// Mutable parameter arrays, in [`ParamLayout`] order. Shapes must not change.
    pub fn params_mut(&mut self) -> &mut [Array] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Array> {
        self.layout.index_of(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.layout.index_of(name).map(move |i| &mut self.params[i])
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.layout.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Sets every linear bias and LayerNorm shift to zero.
    pub fn zero_biases(&mut self) {
        for idx in 0..self.params.len() {
            if self.layout.is_bias(idx) {
                self.params[idx].fill(0.0);
            }
        }
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Array::len).sum()
    }

    /// Sinusoidal position table for the first `n` positions.
    pub fn sinusoidal_positions(n: usize, d: usize) -> Array {
        Array2::from_shape_fn((n, d), |(pos, i)| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
    }
}
