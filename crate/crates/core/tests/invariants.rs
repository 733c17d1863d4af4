//! Public-API invariants checked over random models and inputs.

use proptest::prelude::*;
use tlrp_core::conservation::relative_deviation;
use tlrp_core::data::{gen_keyword_sentiment, load_dataset, save_dataset};
use tlrp_core::eval::{activation_curve, pruning_curve, PruningMetric};
use tlrp_core::relevance::predicted_logit_target;
use tlrp_core::transformer::{load, save};
use tlrp_core::{explain, ExplainOptions, Method, ModelConfig, TransformerModel};

const VOCAB: usize = 14;

fn model(seed: u64, zero_bias: bool) -> TransformerModel {
    let mut cfg = ModelConfig::new(VOCAB, 8, 2, 2, 2);
    cfg.max_seq_len = 10;
    let mut m = TransformerModel::init(cfg, seed).unwrap();
    m.vocab = Some(tlrp_core::data::Vocab::generic(VOCAB).tokens().to_vec());
    if zero_bias {
        m.zero_biases();
    }
    m
}

fn tokens() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..VOCAB, 1..=10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bias_free_models_conserve_under_full_detach(seed in any::<u64>(), t in tokens()) {
        let m = model(seed, true);
        let target = predicted_logit_target(&m, &t).unwrap();
        let e = explain(&m, &t, Method::LrpAhLn, target, &ExplainOptions::default()).unwrap();
        let sum: f64 = e.token_relevances.iter().sum();
        prop_assert!(relative_deviation(e.output_score, sum) <= 1e-8);
    }

    #[test]
    fn every_method_returns_one_finite_score_per_token(seed in any::<u64>(), t in tokens()) {
        let m = model(seed, false);
        let target = predicted_logit_target(&m, &t).unwrap();
        for method in Method::ALL {
            let e = explain(&m, &t, method, target, &ExplainOptions::default()).unwrap();
            prop_assert_eq!(e.token_relevances.len(), t.len());
            prop_assert!(e.token_relevances.iter().all(|r| r.is_finite()));
        }
    }

    #[test]
    fn explanations_are_deterministic(seed in any::<u64>(), t in tokens(), eseed in any::<u64>()) {
        let m = model(seed, false);
        let target = predicted_logit_target(&m, &t).unwrap();
        let opts = ExplainOptions { seed: eseed, ..Default::default() };
        for method in [Method::Random, Method::LrpAhLn, Method::Gae] {
            let a = explain(&m, &t, method, target, &opts).unwrap();
            let b = explain(&m, &t, method, target, &opts).unwrap();
            prop_assert_eq!(a.token_relevances, b.token_relevances);
        }
    }

    #[test]
    fn curves_are_bounded_and_span_the_unit_interval(seed in any::<u64>(), t in tokens()) {
        let m = model(seed, false);
        let target = predicted_logit_target(&m, &t).unwrap();
        let e = explain(&m, &t, Method::Gi, target, &ExplainOptions::default()).unwrap();
        let a = activation_curve(&m, &e, 0).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.area));
        prop_assert_eq!(a.points.len(), t.len() + 1);
        prop_assert_eq!(a.points[0][0], 0.0);
        prop_assert_eq!(a.points[t.len()][0], 1.0);
        let p = pruning_curve(&m, &e, 0, PruningMetric::PredictedLogit).unwrap();
        prop_assert_eq!(p.points[0][1], 0.0);
        prop_assert!(p.points.iter().all(|q| q[1] >= 0.0));
    }
}

#[test]
fn dataset_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_keyword_sentiment(9, 30, 6, 20).unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&data, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.examples, data.examples);
    assert_eq!(back.vocab.tokens(), data.vocab.tokens());

    let m = model(4, false);
    let ckpt = dir.path().join("m.json");
    save(&m, &ckpt).unwrap();
    let loaded = load(&ckpt).unwrap();
    let t = [3, 1, 4, 1, 5];
    assert_eq!(loaded.logits(&t).unwrap(), m.logits(&t).unwrap());
}

#[test]
fn generator_is_seeded_and_labels_follow_keywords() {
    let a = gen_keyword_sentiment(1, 200, 12, 40).unwrap();
    assert_eq!(a.examples, gen_keyword_sentiment(1, 200, 12, 40).unwrap().examples);
    assert_ne!(a.examples, gen_keyword_sentiment(2, 200, 12, 40).unwrap().examples);
    let k = (40 - 1) / 6;
    for e in &a.examples {
        let kw = e.keywords.as_ref().unwrap();
        let positive = kw.iter().filter(|&&p| (1..=k).contains(&e.tokens[p])).count();
        assert_eq!(e.label, usize::from(2 * positive > kw.len()));
    }
}
