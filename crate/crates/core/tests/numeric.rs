use proptest::prelude::*;

use ccrank_core::numeric::{grad_check, ops, ParamTable, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v))
}

fn naive(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        for j in 0..m {
            out.row_mut(i)[j] = (0..k).map(|t| a.at(i, t) * b.at(t, j)).sum();
        }
    }
    out
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn matmul_agrees_with_triple_loop((a, b) in (1usize..7, 1usize..7, 1usize..7)
        .prop_flat_map(|(n, k, m)| (matrix(n, k), matrix(k, m))))
    {
        prop_assert!(close(&ops::matmul(&a, &b), &naive(&a, &b), 1e-12));
    }

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 6), mask in prop::collection::vec(any::<bool>(), 6)) {
        let p = ops::masked_softmax(&x, &mask, 1e4);
        let all_masked = mask.iter().all(|&m| m);
        for r in 0..4 {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let sum: f64 = row.iter().sum();
            if all_masked {
                prop_assert_eq!(sum, 0.0);
            } else {
                prop_assert!((sum - 1.0).abs() < 1e-12);
                let masked: f64 = row.iter().zip(&mask).filter(|(_, m)| **m).map(|(v, _)| v).sum();
                prop_assert!(masked < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant(x in matrix(3, 5), shift in -40.0f64..40.0) {
        let mask = [false; 5];
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v += shift);
        prop_assert!(close(&ops::masked_softmax(&x, &mask, 1e4), &ops::masked_softmax(&y, &mask, 1e4), 1e-12));
    }

    #[test]
    fn clamp_bounds_and_fixes_small_values(x in matrix(2, 8), bound in 0.5f64..60.0) {
        let c = ops::clamp_logits(&x, bound);
        for (a, b) in x.data().iter().zip(c.data()) {
            prop_assert!(b.abs() <= bound);
            if a.abs() <= bound {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamTable::new();
        let mut rand_t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
        };
        let x = params.insert("x", rand_t(&[3, 5]), false);
        let g = params.insert("gain", rand_t(&[5]), false);
        let s = params.insert("shift", rand_t(&[5]), false);
        let readout = rand_t(&[3, 5]);
        let report = grad_check(&params, 1e-5, |p, grads| {
            let (y, cache) = ops::layer_norm(p.get(x), p.get(g), p.get(s));
            let loss = y.data().iter().zip(readout.data()).map(|(a, b)| a * b).sum();
            if let Some(grads) = grads {
                let (dg, ds) = grads.pair_mut(g, s);
                let dx = ops::layer_norm_backward(&cache, p.get(g), &readout, dg, ds);
                grads.get_mut(x).add_assign(&dx);
            }
            Ok(loss)
        })
        .unwrap();
        prop_assert!(report.max_error() < 1e-5, "{:?}", report.worst());
    }
}
