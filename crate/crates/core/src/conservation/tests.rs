use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::transformer::ModelConfig;

fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array {
    Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
}

fn model(seed: u64) -> TransformerModel {
    let mut cfg = ModelConfig::new(13, 8, 2, 2, 2);
    cfg.max_seq_len = 16;
    TransformerModel::init(cfg, seed).unwrap()
}

fn tokens(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| rng.random_range(0..13)).collect()
}

const TARGET: ExplanationTarget = ExplanationTarget::Logit { class: 0 };

#[test]
fn pearson_and_deviation_basics() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    assert_eq!(relative_deviation(2.0, 1.0), 0.5);
    assert_eq!(relative_deviation(0.0, 1e-12), 1.0);
}

#[test]
fn report_csv_has_one_row_per_pair() {
    let pairs = vec![
        ConservationPair { output_score: 1.0, relevance_sum: 1.0 },
        ConservationPair { output_score: 2.0, relevance_sum: 1.0 },
    ];
    let r = ConservationReport::from_pairs(Method::Gi, pairs);
    assert_eq!(r.mean_relative_deviation, 0.25);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("example,output_score,relevance_sum,relative_deviation\n"));
}

#[test]
fn empty_dataset_is_a_usage_error() {
    let err = check_global(&model(0), &[], Method::Gi, &ExplainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Usage(_)));
}

#[test]
fn constant_gates_conserve_exactly() {
    let mut m = model(1);
    for name in m.layout().names.clone() {
        if name.ends_with("w_k") {
            m.param_mut(&name).unwrap().fill(0.0);
        }
    }
    let check = check_attention_head(&m, &tokens(1, 5), 1, 0, TARGET, DetachMode::None).unwrap();
    assert_eq!(check.correction, 0.0);
    assert_eq!(check.sum_queries, 0.0);
    assert!((check.sum_keys - check.sum_output).abs() <= 1e-12 * check.scale());
}

#[test]
fn out_of_range_components_are_rejected() {
    let m = model(2);
    let t = tokens(2, 4);
    assert!(check_attention_head(&m, &t, 2, 0, TARGET, DetachMode::None).is_err());
    assert!(check_attention_head(&m, &t, 0, 2, TARGET, DetachMode::None).is_err());
    assert!(check_layernorm(&m, &t, 4, TARGET, DetachMode::None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn head_identity_holds_in_random_models(seed in any::<u64>(), n in 2usize..9) {
        let m = model(seed);
        let t = tokens(seed, n);
        for layer in 0..2 {
            for head in 0..2 {
                let c = check_attention_head(&m, &t, layer, head, TARGET, DetachMode::None).unwrap();
                prop_assert!(c.relative_identity_residual() <= 1e-6, "{:?}", c);
            }
        }
    }

    #[test]
    fn detached_components_conserve(seed in any::<u64>(), n in 2usize..9) {
        let m = model(seed);
        let t = tokens(seed, n);
        for layer in 0..2 {
            for head in 0..2 {
                let c = check_attention_head(&m, &t, layer, head, TARGET, DetachMode::AhLn).unwrap();
                prop_assert_eq!(c.sum_queries, 0.0);
                prop_assert!(c.conservation_gap().abs() <= 1e-8 * c.scale(), "{:?}", c);
            }
        }
        for ln in 0..4 {
            for row in check_layernorm(&m, &t, ln, TARGET, DetachMode::AhLn).unwrap() {
                let scale = row.sum_input.abs() + row.sum_output.abs() + DEVIATION_FLOOR;
                prop_assert!(row.conservation_gap().abs() <= 1e-8 * scale, "{:?}", row);
            }
        }
    }

    #[test]
    fn layernorm_ratio_matches_prediction(seed in any::<u64>(), n in 1usize..9) {
        let m = model(seed);
        let t = tokens(seed, n);
        for ln in 0..4 {
            for row in check_layernorm(&m, &t, ln, TARGET, DetachMode::None).unwrap() {
                if let Some(err) = row.relative_error() {
                    prop_assert!(err <= 1e-6, "{:?}", row);
                }
            }
        }
    }
}

/// Solves `Σ_i softmax(a x')_i a_i = 0` for the last entry of `a` by bisection.
fn centering_root(a: &mut [f64], xq: f64) {
    let last = a.len() - 1;
    let weighted_mean = |a: &[f64]| {
        let m = a.iter().map(|v| v * xq).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = a.iter().map(|v| (v * xq - m).exp()).collect();
        let z: f64 = w.iter().sum();
        a.iter().zip(&w).map(|(v, wi)| v * wi / z).sum::<f64>()
    };
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        a[last] = mid;
        if weighted_mean(a) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    a[last] = 0.5 * (lo + hi);
}

#[test]
fn centered_head_matches_covariance_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        // Scores depend on the first coordinate only: q_i = a_i a' with W_K = W_Q = e_1.
        let xq = rng.random_range(0.5..1.5);
        let mut a = vec![rng.random_range(-1.5..-0.2), rng.random_range(-1.5..-0.2), 0.0];
        centering_root(&mut a, xq);
        let q: Vec<f64> = a.iter().map(|v| v * xq).collect();
        let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = q.iter().map(|v| (v - m).exp()).sum();
        let p: Vec<f64> = q.iter().map(|v| (v - m).exp() / z).collect();
        let b1 = rng.random_range(-1.0..1.0);
        let b2 = rng.random_range(-1.0..1.0);
        let b3 = -(p[0] * b1 + p[1] * b2) / p[2];
        let x = array![[a[0], b1], [a[1], b2], [a[2], b3]];
        let x_query = array![[xq, rng.random_range(-1.0..1.0)]];
        let w = array![[1.0], [0.0]];
        let dfdy = random(&mut rng, 1, 2);

        let c = check_standalone_head(&x, &x_query, &w, &w, &dfdy, false).unwrap();
        assert!(c.relative_identity_residual() <= 1e-6, "{c:?}");
        let gap = c.conservation_gap();
        assert!((gap - c.centered_correction).abs() <= 1e-6 * c.scale(), "{c:?}");
        assert!(c.centered_correction.abs() > 1e-3, "construction should not be trivial");
    }
}

#[test]
fn layernorm_eps_sweep_and_collapse() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for eps in [1e-9, 1e-6, 1e-3, 1.0, 10.0] {
        for _ in 0..20 {
            let x = random(&mut rng, 3, 6) * 2.0;
            let dfdy = random(&mut rng, 3, 6);
            for row in check_standalone_layernorm(&x, &dfdy, eps, false).unwrap() {
                let err = row.relative_error().unwrap();
                assert!(err <= 1e-6, "eps {eps}: {row:?}");
                // The engine's own gradient agrees up to f64 rounding of O(1) terms.
                assert!((row.sum_input - row.sum_input_autodiff).abs() <= 1e-13, "{row:?}");
                if eps >= 1e-3 {
                    assert!((row.sum_input - row.sum_input_autodiff).abs() <= 1e-9 * row.sum_input.abs());
                }
            }
        }
    }

    assert_eq!(predicted_norm_ratio(0.7, 0.7), 0.5);
    assert_eq!(predicted_norm_ratio(0.0, 1e-6), 1.0);
    let x = [1.0, -1.0, 2.0, -2.0];
    let var = 2.5;
    let profile = relevance_collapse_profile(&x, &[var / 3.0, 1e-12, 1e12]);
    assert!((profile[0].ratio - 0.25).abs() < 1e-15);
    assert!(profile[1].ratio < 1e-12);
    assert!(profile[2].ratio > 1.0 - 1e-11);
    let ladder = relevance_collapse_profile(&x, &default_eps_ladder());
    assert!(ladder.windows(2).all(|w| w[0].ratio < w[1].ratio));
}

#[test]
fn degenerate_norm_row_is_flagged() {
    let x = array![[1.0, 2.0, 3.0]];
    let rows = check_standalone_layernorm(&x, &Array2::zeros((1, 3)), 1e-6, false).unwrap();
    assert!(rows[0].degenerate());
    assert_eq!(rows[0].relative_error(), None);
}

#[test]
fn global_conservation_separates_lrp_from_gi_and_baselines() {
    let data: Vec<Vec<usize>> = (0..20).map(|s| tokens(s, 3 + (s as usize % 5))).collect();
    let mut lrp_total = 0.0;
    let mut gi_total = 0.0;
    for seed in 0..5 {
        let mut m = model(100 + seed);
        m.zero_biases();
        let opts = ExplainOptions::default();
        let lrp = check_global(&m, &data, Method::LrpAhLn, &opts).unwrap();
        for p in &lrp.pairs {
            assert!(p.relative_deviation() <= 1e-4, "{p:?}");
        }
        let gi = check_global(&m, &data, Method::Gi, &opts).unwrap();
        assert_eq!(lrp.pairs.len(), data.len());
        lrp_total += lrp.mean_relative_deviation;
        gi_total += gi.mean_relative_deviation;
        for method in [Method::Rollout, Method::AFlow, Method::Gae] {
            let r = check_global(&m, &data, method, &opts).unwrap();
            assert!(r.mean_relative_deviation > 0.1, "{method}: {}", r.mean_relative_deviation);
        }
    }
    assert!(gi_total >= 10.0 * lrp_total, "gi {gi_total} lrp {lrp_total}");
}

#[test]
fn component_summary_reflects_detach_mode() {
    let data: Vec<Vec<usize>> = (0..6).map(|s| tokens(s, 4 + s as usize)).collect();
    let m = model(7);
    let plain = check_components(&m, &data, DetachMode::None).unwrap();
    assert_eq!(plain.heads_checked, 6 * 2 * 2);
    assert_eq!(plain.norm_rows_checked, data.iter().map(|t| 4 * t.len()).sum::<usize>());
    assert!(plain.max_head_relative_identity_residual.unwrap() <= 1e-6);
    assert!(plain.max_norm_ratio_relative_error.unwrap() <= 1e-6);
    assert!(plain.max_head_relative_gap > 1e-6);

    let lrp = check_components(&m, &data, DetachMode::AhLn).unwrap();
    assert_eq!(lrp.max_head_relative_identity_residual, None);
    assert_eq!(lrp.max_norm_ratio_relative_error, None);
    assert!(lrp.max_head_relative_gap <= 1e-8, "{lrp:?}");
    assert!(lrp.max_norm_relative_gap <= 1e-8, "{lrp:?}");
    assert!(check_components(&m, &[], DetachMode::None).is_err());
}
