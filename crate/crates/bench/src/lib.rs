//! Shared fixtures for the benchmarks.

use tlrp_core::data::gen_keyword_sentiment;
use tlrp_core::{ModelConfig, TransformerModel};

/// An untrained keyword-task model and a batch of its inputs.
///
/// Explanation cost does not depend on the parameter values, so training is
/// skipped to keep benchmark setup fast.
pub fn keyword_fixture(seq_len: usize, n_inputs: usize) -> (TransformerModel, Vec<Vec<usize>>) {
    let data = gen_keyword_sentiment(0, n_inputs, seq_len, 40).expect("valid generator settings");
    let mut cfg = ModelConfig::new(data.vocab.len(), 16, 2, 2, 2);
    cfg.max_seq_len = seq_len;
    let mut model = TransformerModel::init(cfg, 0).expect("valid model config");
    model.vocab = Some(data.vocab.tokens().to_vec());
    (model, data.token_sequences())
}
