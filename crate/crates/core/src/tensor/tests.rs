use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{max_relative_error, numeric_gradient, DEFAULT_STEP, RELATIVE_FLOOR};

fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array {
    Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
}

/// Autodiff gradient of `build(x)` w.r.t. `x` next to its finite-difference estimate.
fn grad_pair<F>(x: &Array, build: F) -> (Array, Array)
where
    F: Fn(&mut Graph, Tensor) -> Tensor,
{
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone(), true);
    let root = build(&mut g, leaf);
    let auto = g.backward(root).unwrap().wrt(leaf);
    let numeric = numeric_gradient(
        |p| {
            let mut g = Graph::new();
            let leaf = g.leaf(p.clone(), false);
            let root = build(&mut g, leaf);
            g.scalar(root)
        },
        x,
        DEFAULT_STEP,
    );
    (auto, numeric)
}

#[test]
fn matmul_identity_and_hand_values() {
    let mut g = Graph::new();
    let i = g.constant(Array2::eye(2));
    let m = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
    let p = g.matmul(i, m).unwrap();
    assert_eq!(g.value(p), &array![[1.0, 2.0], [3.0, 4.0]]);

    let a = g.constant(array![[1.0, 2.0]]);
    let b = g.constant(array![[3.0], [4.0]]);
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &array![[11.0]]);
}

#[test]
fn matmul_rejects_inner_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Array2::zeros((2, 3)));
    let b = g.constant(Array2::zeros((2, 3)));
    assert!(matches!(g.matmul(a, b), Err(crate::Error::Dimension { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 4, 3);
    let b = random(&mut rng, 3, 5);
    let w = random(&mut rng, 4, 5);
    let (auto_a, num_a) = grad_pair(&a, |g, x| {
        let b = g.constant(b.clone());
        let w = g.constant(w.clone());
        let p = g.matmul(x, b).unwrap();
        let p = g.mul(p, w).unwrap();
        g.sum(p)
    });
    assert!(max_relative_error(&auto_a, &num_a, RELATIVE_FLOOR) <= 1e-6);
    let (auto_b, num_b) = grad_pair(&b, |g, x| {
        let a = g.constant(a.clone());
        let w = g.constant(w.clone());
        let p = g.matmul(a, x).unwrap();
        let p = g.mul(p, w).unwrap();
        g.sum(p)
    });
    assert!(max_relative_error(&auto_b, &num_b, RELATIVE_FLOOR) <= 1e-6);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Array2::zeros((1, 3)));
    let p = g.softmax(x, Axis(1));
    for &v in g.value(p) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_survives_large_logits() {
    let mut g = Graph::new();
    let x = g.constant(array![[1000.0, 0.0]]);
    let p = g.softmax(x, Axis(1));
    let v = g.value(p);
    assert!(v.iter().all(|v| v.is_finite()));
    assert_eq!(v[[0, 0]], 1.0);
    assert!(v[[0, 1]] < 1e-300);
}

#[test]
fn softmax_columns_sum_to_one_along_axis0() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let x = g.constant(random(&mut rng, 4, 3) * 5.0);
    let p = g.softmax(x, Axis(0));
    for col in g.value(p).columns() {
        assert!((col.sum() - 1.0).abs() < 1e-12);
    }
}

/// Analytic Jacobian `∂p_k/∂x_i = p_k (δ_ik − p_i)` against the reverse sweep.
#[test]
fn softmax_backward_equals_analytic_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5;
    let x = random(&mut rng, 1, n) * 3.0;
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone(), true);
    let p = g.softmax(leaf, Axis(1));
    let probs = g.value(p).clone();
    for k in 0..n {
        let pk = g.element(p, 0, k).unwrap();
        let grad = g.backward(pk).unwrap().wrt(leaf);
        for i in 0..n {
            let delta = if i == k { 1.0 } else { 0.0 };
            let analytic = probs[[0, k]] * (delta - probs[[0, i]]);
            assert!((grad[[0, i]] - analytic).abs() <= 1e-10);
        }
    }
}

#[test]
fn layernorm_examples() {
    let mut g = Graph::new();
    let x = g.constant(array![[1.0, -1.0]]);
    let y = g.layernorm_core(x, 1e-12, false).unwrap();
    assert!((g.value(y)[[0, 0]] - 1.0).abs() < 1e-9);
    assert!((g.value(y)[[0, 1]] + 1.0).abs() < 1e-9);

    let c = g.constant(Array2::from_elem((1, 4), 2.5));
    let y = g.layernorm_core(c, 1e-6, false).unwrap();
    assert!(g.value(y).iter().all(|&v| v == 0.0));

    assert!(matches!(
        g.layernorm_core(c, 0.0, false),
        Err(crate::Error::Parameter(_))
    ));
    assert!(g.layernorm_core(c, -1.0, true).is_err());
}

#[test]
fn layernorm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 1, 8);
    let w = random(&mut rng, 1, 8);
    let (auto, num) = grad_pair(&x, |g, x| {
        let w = g.constant(w.clone());
        let y = g.layernorm_core(x, 1e-3, false).unwrap();
        let p = g.mul(y, w).unwrap();
        g.sum(p)
    });
    assert!(max_relative_error(&auto, &num, RELATIVE_FLOOR) <= 1e-6);
}

/// The fused detached LayerNorm equals the composition with an explicit detach
/// on `sqrt(eps + Var[x])`.
#[test]
fn fused_layernorm_matches_composed_detach() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, 3, 6);
    let w = random(&mut rng, 3, 6);
    for detach in [false, true] {
        let mut g = Graph::new();
        let leaf = g.leaf(x.clone(), true);
        let wc = g.constant(w.clone());
        let mean = g.mean_rows(leaf);
        let centered = g.sub_col(leaf, mean).unwrap();
        let var = g.var_rows(leaf);
        let shifted = g.add_scalar(var, 1e-2);
        let mut denom = g.sqrt(shifted);
        if detach {
            denom = g.detach(denom);
        }
        let composed = g.div_col(centered, denom).unwrap();
        let fused = g.layernorm_core(leaf, 1e-2, detach).unwrap();
        assert!(max_relative_error(g.value(composed), g.value(fused), 1e-12) < 1e-12);

        let a = g.mul(composed, wc).unwrap();
        let a = g.sum(a);
        let b = g.mul(fused, wc).unwrap();
        let b = g.sum(b);
        let ga = g.backward(a).unwrap().wrt(leaf);
        let gb = g.backward(b).unwrap().wrt(leaf);
        assert!(max_relative_error(&ga, &gb, 1e-12) < 1e-10);
    }
}

#[test]
fn detach_examples() {
    // f = x * detach(x), x = 3
    let mut g = Graph::new();
    let x = g.leaf(array![[3.0]], true);
    let d = g.detach(x);
    let f = g.mul(x, d).unwrap();
    assert_eq!(g.scalar(f), 9.0);
    assert_eq!(g.backward(f).unwrap().wrt(x)[[0, 0]], 3.0);

    // f = detach(x)
    let mut g = Graph::new();
    let x = g.leaf(array![[3.0]], true);
    let f = g.detach(x);
    let grads = g.backward(f).unwrap();
    assert!(grads.get(x).is_none());
    assert_eq!(grads.wrt(x)[[0, 0]], 0.0);

    // f = x + detach(x^2), x = 2
    let mut g = Graph::new();
    let x = g.leaf(array![[2.0]], true);
    let sq = g.mul(x, x).unwrap();
    let d = g.detach(sq);
    let f = g.add(x, d).unwrap();
    assert_eq!(g.scalar(f), 6.0);
    assert_eq!(g.backward(f).unwrap().wrt(x)[[0, 0]], 1.0);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Array2::from_elem((2, 3), 0.7), true);
    let s = g.sum(x);
    assert_eq!(g.backward(s).unwrap().wrt(x), Array2::<f64>::ones((2, 3)));

    let mut g = Graph::new();
    let x = g.leaf(array![[2.0]], true);
    let y = g.leaf(array![[5.0]], true);
    let f = g.mul(x, y).unwrap();
    let grads = g.backward(f).unwrap();
    assert_eq!(grads.wrt(x)[[0, 0]], 5.0);
    assert_eq!(grads.wrt(y)[[0, 0]], 2.0);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.leaf(Array2::zeros((1, 2)), true);
    assert!(matches!(g.backward(x), Err(crate::Error::Usage(_))));
}

#[test]
fn gather_rejects_unknown_ids() {
    let mut g = Graph::new();
    let t = g.leaf(Array2::zeros((3, 2)), true);
    assert!(matches!(g.gather(t, &[0, 3]), Err(crate::Error::Input(_))));
}

/// `Σ_i x_i ∂x̃_j/∂x_i = x̃_j`: centering is homogeneous of degree one.
#[test]
fn centering_is_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, 1, 7) * 4.0;
    let mut g = Graph::new();
    let leaf = g.leaf(x.clone(), true);
    let mean = g.mean_rows(leaf);
    let centered = g.sub_col(leaf, mean).unwrap();
    for j in 0..7 {
        let e = g.element(centered, 0, j).unwrap();
        let grad = g.backward(e).unwrap().wrt(leaf);
        let lhs: f64 = (&x * &grad).sum();
        assert!((lhs - g.value(centered)[[0, j]]).abs() <= 1e-10);
    }
}

/// Every plumbing op, composed into one scalar, against finite differences.
fn plumbing_graph(g: &mut Graph, x: Tensor, w: &Array, table: &Array) -> (Tensor, Tensor) {
    let w = g.constant(w.clone());
    let t = g.constant(table.clone());
    let h = g.matmul(x, w).unwrap(); // 3x4
    let e = g.gather(t, &[1, 0, 1]).unwrap(); // 3x4
    let h = g.add(h, e).unwrap();
    let act = g.gelu(h);
    let r = g.relu(h);
    let prod = g.mul(act, r).unwrap();
    let diff = g.sub(prod, h).unwrap();
    let m = g.mean_rows(diff);
    let v = g.var_rows(diff);
    let v = g.add_scalar(v, 0.5);
    let s = g.sqrt(v);
    let c = g.sub_col(diff, m).unwrap();
    let n = g.div_col(c, s).unwrap();
    let ln = g.layernorm_core(n, 1e-3, false).unwrap();
    let tr = g.transpose(ln); // 4x3
    let sm = g.softmax(tr, Axis(0));
    let pooled = g.mean_cols(sm); // 1x3
    let bias = g.mean_cols(diff); // 1x4
    let lsm = g.log_softmax(bias, Axis(1));
    let gamma = g.element(lsm, 0, 2).unwrap();
    let scaled = g.scale(pooled, 1.7);
    let row = g.mul_row(tr, scaled).unwrap();
    let row = g.add_row(row, pooled).unwrap();
    let id = g.identity(row);
    let total = g.sum(id);
    let total = g.mul(total, gamma).unwrap();
    (g.add(total, gamma).unwrap(), h)
}

#[test]
fn composed_plumbing_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, 3, 2);
    let w = random(&mut rng, 2, 4);
    let table = random(&mut rng, 2, 4);
    let (auto, num) = grad_pair(&x, |g, x| plumbing_graph(g, x, &w, &table).0);
    assert!(max_relative_error(&auto, &num, RELATIVE_FLOOR) <= 1e-6);
}

#[test]
fn gather_scatters_into_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let table = random(&mut rng, 3, 2);
    let w = random(&mut rng, 4, 2);
    let (auto, num) = grad_pair(&table, |g, t| {
        let w = g.constant(w.clone());
        let e = g.gather(t, &[2, 0, 2, 1]).unwrap();
        let p = g.mul(e, w).unwrap();
        let p = g.gelu(p);
        g.sum(p)
    });
    assert!(max_relative_error(&auto, &num, RELATIVE_FLOOR) <= 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// A leaf reachable from the root only through detached edges gets exactly zero.
    #[test]
    fn detached_paths_carry_no_gradient(
        seed in any::<u64>(),
        depth in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let frozen = g.leaf(random(&mut rng, 2, 2), true);
        let live = g.leaf(random(&mut rng, 2, 2), true);
        let mut h = g.detach(frozen);
        for _ in 0..depth {
            let w = g.constant(random(&mut rng, 2, 2));
            h = g.matmul(h, w).unwrap();
            h = g.gelu(h);
        }
        let mixed = g.mul(h, live).unwrap();
        let root = g.sum(mixed);
        let grads = g.backward(root).unwrap();
        prop_assert!(grads.wrt(frozen).iter().all(|&v| v == 0.0));
        prop_assert!(grads.get(live).is_some());
    }

    /// Softmax backward matches the analytic Jacobian for dimensions up to 16.
    #[test]
    fn softmax_jacobian_property(seed in any::<u64>(), n in 1usize..=16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 1, n) * 4.0;
        let mut g = Graph::new();
        let leaf = g.leaf(x, true);
        let p = g.softmax(leaf, Axis(1));
        let probs = g.value(p).clone();
        for k in 0..n {
            let pk = g.element(p, 0, k).unwrap();
            let grad = g.backward(pk).unwrap().wrt(leaf);
            for i in 0..n {
                let delta = if i == k { 1.0 } else { 0.0 };
                let analytic = probs[[0, k]] * (delta - probs[[0, i]]);
                prop_assert!((grad[[0, i]] - analytic).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn random_plumbing_graphs_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, 3, 2);
        let w = random(&mut rng, 2, 4);
        let table = random(&mut rng, 2, 4);
        let mut probe = Graph::new();
        let leaf = probe.constant(x.clone());
        let (_, kink) = plumbing_graph(&mut probe, leaf, &w, &table);
        // ReLU is not differentiable at zero; finite differences straddling it are meaningless.
        prop_assume!(probe.value(kink).iter().all(|v| v.abs() > 1e-3));
        let (auto, num) = grad_pair(&x, |g, x| plumbing_graph(g, x, &w, &table).0);
        prop_assert!(max_relative_error(&auto, &num, RELATIVE_FLOOR) <= 1e-4);
    }
}
