//! Contract tests for the tensor operations: hand-checked examples plus
//! randomized oracles.

use adploc_core::error::Error;
use adploc_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tape_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let (va, vb) = (tape.leaf(a), tape.leaf(b));
    let out = tape.matmul(va, vb).unwrap();
    tape.value(out).clone()
}

/// Independent oracle: naive triple loop.
fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(i, p) * b.at(p, j);
            }
            c[i * n + j] = s;
        }
    }
    c
}

#[test]
fn matmul_identity_left() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::matrix(3, 3, (0..9).map(|_| rng.random::<f64>()).collect()).unwrap();
    let out = tape_matmul(&Tensor::eye(3), &x);
    assert_eq!(out.data(), x.data());
}

#[test]
fn matmul_identity_right() {
    let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = tape_matmul(&a, &Tensor::eye(2));
    assert_eq!(out.data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::matrix(5, 4, (0..20).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .unwrap();
    let b = Tensor::matrix(4, 3, (0..12).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .unwrap();
    let out = tape_matmul(&a, &b);
    let oracle = matmul_oracle(&a, &b);
    for (x, y) in out.data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(&Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(&Tensor::zeros(vec![4, 2]));
    let err = tape.matmul(a, b).unwrap_err();
    match err {
        Error::ShapeMismatch { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("expected shape mismatch, got {other}"),
    }
}

fn softmax(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.leaf(&Tensor::matrix(rows, cols, data).unwrap());
    let out = tape.softmax_rows(v);
    tape.value(out).clone()
}

#[test]
fn softmax_uniform_row() {
    let out = softmax(1, 4, vec![0.0; 4]);
    for &v in out.data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn softmax_huge_logit_no_overflow() {
    let out = softmax(1, 2, vec![1000.0, 0.0]);
    assert!(out.all_finite());
    assert!((out.data()[0] - 1.0).abs() < 1e-12);
    assert!(out.data()[1] < 1e-12);
}

#[test]
fn softmax_matches_direct_exp_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data: Vec<f64> = (0..24).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
    let out = softmax(4, 6, data.clone());
    for r in 0..4 {
        let row = &data[r * 6..(r + 1) * 6];
        let exps: Vec<f64> = row.iter().map(|&v| v.exp()).collect();
        let total: f64 = exps.iter().sum();
        let row_sum: f64 = out.data()[r * 6..(r + 1) * 6].iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-9);
        for c in 0..6 {
            assert!((out.at(r, c) - exps[c] / total).abs() < 1e-12);
        }
    }
}

fn layer_norm_row(row: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(&Tensor::matrix(1, row.len(), row.to_vec()).unwrap());
    let g = tape.leaf(&Tensor::vector(gamma));
    let b = tape.leaf(&Tensor::vector(beta));
    let out = tape.layer_norm(x, g, b, 1e-9).unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn layer_norm_constant_row_is_zero() {
    let out = layer_norm_row(&[5.0; 6], &[1.0; 6], &[0.0; 6]);
    for v in out {
        assert!(v.abs() < 1e-9);
    }
}

#[test]
fn layer_norm_zero_gamma_gives_beta() {
    let out = layer_norm_row(&[1.0, -2.0, 0.5, 9.0], &[0.0; 4], &[5.0; 4]);
    assert_eq!(out, vec![5.0; 4]);
}

#[test]
fn layer_norm_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let row: Vec<f64> = (0..64).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
    let out = layer_norm_row(&row, &[1.0; 64], &[0.0; 64]);
    let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
    let var: f64 = out.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / out.len() as f64;
    assert!(mean.abs() < 1e-9, "mean {mean}");
    assert!((var - 1.0).abs() < 1e-6, "var {var}");
}

#[test]
fn finite_outputs_on_finite_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::matrix(4, 4, (0..16).map(|_| rng.random::<f64>() * 100.0).collect()).unwrap();
    let g = Tensor::vector(&[1.0; 4]);
    let b = Tensor::vector(&[0.0; 4]);
    let mut tape = Tape::new();
    let (vx, vg, vb) = (tape.leaf(&x), tape.leaf(&g), tape.leaf(&b));
    let mm = tape.matmul(vx, vx).unwrap();
    let sm = tape.softmax_rows(mm);
    let ln = tape.layer_norm(sm, vg, vb, 1e-6).unwrap();
    let ge = tape.gelu(ln);
    assert!(tape.value(ge).all_finite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// matmul agrees with the naive oracle within 1e-12 absolute for
    /// dims <= 32 and entries bounded by 10.
    #[test]
    fn matmul_oracle_property(
        m in 1usize..=32,
        k in 1usize..=32,
        n in 1usize..=32,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::matrix(m, k, (0..m * k).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect()).unwrap();
        let b = Tensor::matrix(k, n, (0..k * n).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect()).unwrap();
        let out = tape_matmul(&a, &b);
        let oracle = matmul_oracle(&a, &b);
        for (x, y) in out.data().iter().zip(&oracle) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    /// Softmax rows sum to 1 within 1e-9 for any finite input.
    #[test]
    fn softmax_rows_are_stochastic(
        rows in 1usize..=8,
        cols in 1usize..=16,
        scale in prop::sample::select(vec![1.0, 1e3, 1e6, 1e100]),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
        let out = softmax(rows, cols, data);
        prop_assert!(out.all_finite());
        for row in out.data().chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    /// Steering vectors have exactly unit first entry and unit modulus.
    #[test]
    fn steering_unit_modulus(aoa in -3.2f64..3.2, n_tx in 1usize..=64) {
        let e = adploc_core::channel::steering_vector(aoa, n_tx, 0.5);
        prop_assert_eq!(e[0], num_complex::Complex64::new(1.0, 0.0));
        for v in e {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }
}
