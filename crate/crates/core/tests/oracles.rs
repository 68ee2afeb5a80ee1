//! Engine kernels against independent brute-force loops.

use nst_core::objective::gram_matrix;
use nst_core::{Graph, Tensor};
use nst_testkit::oracles;
use nst_testkit::suites::oracle_cases;
use proptest::prelude::*;

#[test]
fn kernels_match_brute_force() {
    for case in oracle_cases(11, 200) {
        assert!(case.passed(), "{}: {:e}", case.name, case.error);
    }
}

fn tensor(shape: [usize; 3], data: &[f64]) -> Tensor {
    Tensor::new(
        shape.to_vec(),
        data[..shape.iter().product::<usize>()].to_vec(),
    )
    .unwrap()
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let mut g = Graph::new();
    let (x, w, b) = (
        g.constant(x.clone()),
        g.constant(w.clone()),
        g.constant(b.clone()),
    );
    let y = g.conv2d(x, w, b, stride, pad).unwrap();
    g.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_its_input(
        data in prop::collection::vec(-1.0f64..1.0, 3 * 2 * 6 * 6),
        weights in prop::collection::vec(-1.0f64..1.0, 2 * 2 * 3 * 3),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
        stride in 1usize..=2,
        pad in 0usize..=1,
    ) {
        let x1 = tensor([2, 6, 6], &data);
        let x2 = tensor([2, 6, 6], &data[72..]);
        let w = Tensor::new(vec![2, 2, 3, 3], weights).unwrap();
        let zero = Tensor::zeros([2]);
        let mixed: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, b)| alpha * a + beta * b).collect();
        let lhs = conv(&Tensor::new(vec![2, 6, 6], mixed).unwrap(), &w, &zero, stride, pad);
        let (y1, y2) = (conv(&x1, &w, &zero, stride, pad), conv(&x2, &w, &zero, stride, pad));
        for ((l, a), b) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (alpha * a + beta * b)).abs() <= 1e-9);
        }
    }

    #[test]
    fn gram_is_symmetric_positive_semidefinite(
        c in 1usize..=4,
        h in 1usize..=8,
        w in 1usize..=8,
        data in prop::collection::vec(-2.0f64..2.0, 4 * 8 * 8),
    ) {
        let x = tensor([c, h, w], &data);
        let g = gram_matrix(&x).unwrap();
        let v = g.values.data();
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(v[i * c + j], v[j * c + i]);
            }
        }
        let eig = oracles::symmetric_eigenvalues(v, c);
        let scale = eig.iter().fold(1e-12f64, |m, e| m.max(e.abs()));
        prop_assert!(eig[0] >= -1e-10 * scale, "eigenvalues {:?}", eig);
    }

    #[test]
    fn tv_is_translation_invariant(
        data in prop::collection::vec(-1.0f64..1.0, 3 * 5 * 5),
        shift in -10.0f64..10.0,
    ) {
        let x = tensor([3, 5, 5], &data);
        let shifted = Tensor::new(vec![3, 5, 5], x.data().iter().map(|v| v + shift).collect()).unwrap();
        let tv = |t: &Tensor| oracles::total_variation(t.data(), (3, 5, 5));
        let mut g = Graph::new();
        let (a, b) = (g.constant(x.clone()), g.constant(shifted));
        let (ta, tb) = (g.total_variation(a).unwrap(), g.total_variation(b).unwrap());
        prop_assert!((g.scalar(ta).unwrap() - g.scalar(tb).unwrap()).abs() <= 1e-9);
        prop_assert!((g.scalar(ta).unwrap() - tv(&x)).abs() <= 1e-10);
    }
}

#[test]
fn checkerboard_has_more_variation_than_its_blur() {
    let (h, w) = (8, 8);
    let board: Vec<f64> = (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect();
    let (blur, _) = oracles::conv2d(&board, (1, h, w), &[1.0 / 9.0; 9], (1, 3), &[0.0], 1, 1);
    let mut g = Graph::new();
    let a = g.constant(Tensor::new(vec![1, h, w], board).unwrap());
    let b = g.constant(Tensor::new(vec![1, h, w], blur).unwrap());
    let (ta, tb) = (g.total_variation(a).unwrap(), g.total_variation(b).unwrap());
    assert!(g.scalar(ta).unwrap() > g.scalar(tb).unwrap());
}
