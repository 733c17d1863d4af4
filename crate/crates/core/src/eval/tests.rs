use super::*;
use crate::relevance::{ExplainOptions, ExplanationTarget};
use crate::transformer::ModelConfig;

/// Logits from a closure over the token ids; UNK is id 0.
struct Toy<F: Fn(&[usize]) -> Vec<f64> + Sync>(F);

impl<F: Fn(&[usize]) -> Vec<f64> + Sync> Classifier for Toy<F> {
    fn logits(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        Ok((self.0)(tokens))
    }

    fn unk_id(&self) -> Option<usize> {
        Some(0)
    }
}

struct NoUnk;

impl Classifier for NoUnk {
    fn logits(&self, _: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![0.0, 1.0])
    }

    fn unk_id(&self) -> Option<usize> {
        None
    }
}

#[test]
fn trapezoid_and_orders() {
    assert_eq!(trapezoid_area(&[[0.0, 0.5], [0.5, 0.9], [1.0, 0.9]]), 0.8);
    assert_eq!(trapezoid_area(&[[0.0, 1.0], [1.0, 1.0]]), 1.0);
    assert_eq!(activation_order(&[0.1, 0.5, 0.5, -1.0]), vec![1, 2, 0, 3]);
    assert_eq!(pruning_order(&[0.1, -0.5, 0.5, -0.1]), vec![0, 3, 1, 2]);
}

#[test]
fn constant_models() {
    let sure = Toy(|_: &[usize]| vec![0.0, -1e6]);
    let pts = activation_curve_from(&sure, &[3, 4, 5], &[0.3, 0.2, 0.1]).unwrap();
    assert_eq!(trapezoid_area(&pts), 1.0);
    let coin = Toy(|_: &[usize]| vec![0.0, 0.0]);
    let pts = activation_curve_from(&coin, &[3, 4, 5], &[0.3, 0.2, 0.1]).unwrap();
    assert_eq!(pts.len(), 4);
    assert_eq!(trapezoid_area(&pts), 0.5);
    let pts = pruning_curve_from(&coin, &[3, 4, 5], &[0.3, 0.2, 0.1], PruningMetric::PredictedLogit).unwrap();
    assert_eq!(trapezoid_area(&pts), 0.0);
}

#[test]
fn two_token_activation_example() {
    // Token 1 alone gives p = 0.9, the all-UNK input 0.5, the full input 0.9.
    let toy = Toy(|t: &[usize]| vec![0.0, if t.contains(&1) { 9f64.ln() } else { 0.0 }]);
    let pts = activation_curve_from(&toy, &[1, 2], &[2.0, 1.0]).unwrap();
    let expected = [[0.0, 0.5], [0.5, 0.9], [1.0, 0.9]];
    for (p, e) in pts.iter().zip(expected) {
        assert_eq!(p[0], e[0]);
        assert!((p[1] - e[1]).abs() < 1e-15);
    }
    assert!((trapezoid_area(&pts) - 0.8).abs() < 1e-15);
}

#[test]
fn additive_pruning_example() {
    // Logit of class 1 adds a weight per present token.
    let w = [0.0, 1.0, -2.0, 0.5];
    let toy = Toy(move |t: &[usize]| vec![-10.0, t.iter().map(|&i| w[i]).sum()]);
    // Removal order by |r|: index 2 (token 3), index 0 (token 1), index 1 (token 2).
    let pts = pruning_curve_from(&toy, &[1, 2, 3], &[0.4, -0.9, 0.1], PruningMetric::PredictedLogit).unwrap();
    let ys: Vec<f64> = pts.iter().map(|p| p[1]).collect();
    assert_eq!(ys, vec![0.0, 0.25, 2.25, 0.25]);
    let area = (0.0 + 0.25) / 6.0 + (0.25 + 2.25) / 6.0 + (2.25 + 0.25) / 6.0;
    assert!((trapezoid_area(&pts) - area).abs() < 1e-15);

    let pts = pruning_curve_from(&toy, &[1, 2, 3], &[0.4, -0.9, 0.1], PruningMetric::LogitVector).unwrap();
    assert_eq!(pts[1][1], 0.125);
}

#[test]
fn missing_unk_and_length_mismatch() {
    assert!(matches!(activation_curve_from(&NoUnk, &[1], &[1.0]), Err(Error::Config(_))));
    let coin = Toy(|_: &[usize]| vec![0.0, 0.0]);
    assert!(matches!(activation_curve_from(&coin, &[1, 2], &[1.0]), Err(Error::Usage(_))));
}

fn vocab_model(seed: u64) -> TransformerModel {
    let mut cfg = ModelConfig::new(12, 8, 2, 2, 2);
    cfg.max_seq_len = 40;
    let mut m = TransformerModel::init(cfg, seed).unwrap();
    m.vocab = Some(crate::data::Vocab::generic(12).tokens().to_vec());
    m
}

#[test]
fn curves_of_a_model_are_well_formed_and_pure() {
    let m = vocab_model(1);
    let tokens = [3, 7, 1, 11, 5];
    let target = ExplanationTarget::Logit { class: m.predict(&tokens).unwrap() };
    let e = crate::relevance::explain(&m, &tokens, Method::LrpAhLn, target, &ExplainOptions::default()).unwrap();
    let a = activation_curve(&m, &e, 0).unwrap();
    let p = pruning_curve(&m, &e, 0, PruningMetric::PredictedLogit).unwrap();
    assert_eq!(a.points.len(), 6);
    assert!(a.points.windows(2).all(|w| w[0][0] < w[1][0]));
    assert!((0.0..=1.0).contains(&a.area));
    assert_eq!(p.points[0][1], 0.0);
    assert!(p.area >= 0.0);
    assert_eq!(activation_curve(&m, &e, 0).unwrap(), a);
}

fn strip_times(mut t: BenchmarkTable) -> BenchmarkTable {
    t.rows.iter_mut().for_each(|r| r.mean_time_s = None);
    t.cells.iter_mut().for_each(|c| c.time_s = 0.0);
    t
}

#[test]
fn benchmark_is_deterministic_and_order_independent() {
    let m = vocab_model(2);
    let data: Vec<Vec<usize>> = (0..6).map(|i| (0..5).map(|k| 1 + (i * 7 + k * 3) % 11).collect()).collect();
    let opts = BenchmarkOptions { seed: 5, ..Default::default() };
    let a = run_benchmark(&m, &data, &[Method::Random, Method::Gi], &opts).unwrap();
    let b = run_benchmark(&m, &data, &[Method::Random, Method::Gi], &opts).unwrap();
    assert_eq!(strip_times(a.clone()), strip_times(b));
    let c = run_benchmark(&m, &data, &[Method::Gi, Method::Random], &opts).unwrap();
    for method in [Method::Gi, Method::Random] {
        assert_eq!(a.row(method).unwrap().auac, c.row(method).unwrap().auac);
        assert_eq!(a.row(method).unwrap().aumse, c.row(method).unwrap().aumse);
    }
    let csv = a.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "method,auac,aumse,mean_time_s");
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(a.mean_curves.len(), 4);
}

#[test]
fn failing_cells_are_recorded_as_missing() {
    let m = vocab_model(3);
    let data = vec![vec![1, 2, 3], vec![1; 8]];
    let opts = BenchmarkOptions {
        explain: ExplainOptions { flow_max_len: 4, ..Default::default() },
        ..Default::default()
    };
    let t = run_benchmark(&m, &data, &[Method::AFlow, Method::Gi], &opts).unwrap();
    let flow = t.row(Method::AFlow).unwrap();
    assert_eq!((flow.evaluated, flow.missing), (1, 1));
    assert!(flow.missing_reason.as_ref().unwrap().contains("length cap"));
    assert_eq!(t.row(Method::Gi).unwrap().missing, 0);
    assert!(run_benchmark(&m, &[], &[Method::Gi], &opts).is_err());
}

#[test]
fn keyword_sanity_counts_only_correct_examples_with_keywords() {
    let m = vocab_model(4);
    let tokens = vec![3, 7, 1, 11, 5];
    let label = m.predict(&tokens).unwrap();
    let ex = |label, keywords| crate::data::Example { tokens: tokens.clone(), label, keywords };
    let examples = [ex(label, Some(vec![1])), ex(1 - label, Some(vec![1])), ex(label, None)];
    let s = keyword_sanity(&m, &examples, Method::LrpAhLn, &ExplainOptions::default()).unwrap();
    assert_eq!(s.total, 1);
    let e = crate::relevance::explain(
        &m,
        &tokens,
        Method::LrpAhLn,
        ExplanationTarget::Logit { class: label },
        &ExplainOptions::default(),
    )
    .unwrap();
    let r = &e.token_relevances;
    let filler = (r.iter().sum::<f64>() - r[1]) / 4.0;
    assert_eq!(s.passed, usize::from(r[1] > filler));
    let all = keyword_sanity(&m, &[ex(label, Some(vec![0, 1, 2, 3, 4]))], Method::Gi, &ExplainOptions::default()).unwrap();
    assert_eq!((all.passed, all.total, all.fraction()), (1, 1, 1.0));
}
