//! Relevance propagation for small transformer classifiers.
//!
//! The crate bundles a reverse-mode autodiff engine, a post-LN transformer
//! encoder, explanation methods (Gradient×Input, LRP via detached factors and
//! attention baselines), conservation checks, perturbation benchmarks and a
//! synthetic training pipeline.

pub mod conservation;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod relevance;
pub mod tensor;
pub mod transformer;

pub use error::{Error, Result};
pub use relevance::{explain, ExplainOptions, Explanation, ExplanationTarget, Method};
pub use tensor::{Array, Gradients, Graph, Tensor};
pub use transformer::{DetachMode, ModelConfig, TransformerModel};
