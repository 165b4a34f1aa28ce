use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::gradcheck::{check, random_tensor, FD_STEP};

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let eye = tape.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let m = tape.constant(t2(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let y = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.values(y), &[3.0, 4.0, 5.0, 6.0]);

    let a = tape.constant(t2(&[&[1.0, 2.0]]));
    let b = tape.constant(t2(&[&[3.0], &[4.0]]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(y), &[1, 1]);
    assert_eq!(tape.values(y), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a = random_tensor(&[3, 3], 1, 1.0);
    let b = random_tensor(&[3, 3], 2, 1.0);
    let report = check(&[a, b], FD_STEP, |tape, v| {
        let y = tape.matmul(v[0], v[1])?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.relative_errors[0] < 1e-6, "{:?}", report.relative_errors);
    assert!(report.relative_errors[1] < 1e-6);
}

#[test]
fn batch_matmul_gradients_both_layouts() {
    for transpose_b in [false, true] {
        let a = random_tensor(&[2, 3, 4], 3, 1.0);
        let b = if transpose_b {
            random_tensor(&[2, 5, 4], 4, 1.0)
        } else {
            random_tensor(&[2, 4, 5], 4, 1.0)
        };
        let w = random_tensor(&[2, 3, 5], 5, 1.0);
        let report = check(&[a, b], FD_STEP, |tape, v| {
            let y = tape.batch_matmul(v[0], v[1], transpose_b)?;
            let w = tape.constant(w.clone());
            let y = tape.mul(y, w)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-6, "{transpose_b}: {:?}", report.relative_errors);
    }
}

#[test]
fn elementwise_definitions() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, -3.0, 3.0]));
    let s = tape.sigmoid(x);
    let r = tape.relu(x);
    assert_eq!(tape.values(s)[0], 0.5);
    assert_eq!(&tape.values(r)[1..], &[0.0, 3.0]);
}

#[test]
fn tanh_derivative_matches_finite_difference() {
    let x = Tensor::vector(vec![0.7]);
    let report = check(&[x], FD_STEP, |tape, v| Ok(tape.tanh(v[0]))).unwrap();
    let analytic = report.analytic[0][0];
    assert!((analytic - (1.0 - 0.7f64.tanh().powi(2))).abs() < 1e-15);
    assert!((analytic - report.numeric[0][0]).abs() < 1e-8);
}

#[test]
fn binary_ops_reject_incompatible_shapes_but_accept_scalars() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let s = tape.constant(Tensor::scalar(2.0));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    let y = tape.add(a, s).unwrap();
    assert_eq!(tape.values(y), &[2.0; 6]);
}

#[test]
fn scalar_broadcast_gradient_sums() {
    let x = random_tensor(&[2, 3], 9, 1.0);
    let s = Tensor::scalar(0.3);
    let report = check(&[x, s], FD_STEP, |tape, v| {
        let y = tape.mul(v[0], v[1])?;
        let y = tape.sub(y, v[1])?;
        let y = tape.tanh(y);
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-7, "{:?}", report.relative_errors);
}

#[test]
fn softmax_uniform_and_overflow_safe() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.values(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(Tensor::vector(vec![1000.0, 1000.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.values(y), &[0.5, 0.5]);
    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_vjp_matches_finite_differences() {
    let x = random_tensor(&[5], 11, 2.0);
    let w = random_tensor(&[5], 12, 1.0);
    let report = check(&[x], FD_STEP, |tape, v| {
        let y = tape.softmax(v[0], 0)?;
        let w = tape.constant(w.clone());
        let y = tape.mul(y, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-6);
}

#[test]
fn softmax_gradient_on_inner_axis() {
    let x = random_tensor(&[2, 4, 3], 13, 2.0);
    let w = random_tensor(&[2, 4, 3], 14, 1.0);
    let report = check(&[x], FD_STEP, |tape, v| {
        let y = tape.softmax(v[0], 1)?;
        let w = tape.constant(w.clone());
        let y = tape.mul(y, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-6);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let ones = tape.constant(Tensor::full(&[2], 1.0));
    let zeros = tape.constant(Tensor::zeros(&[2]));
    let x = tape.constant(t2(&[&[4.0, 4.0], &[1.0, -1.0]]));
    let y = tape.layer_norm(x, ones, zeros).unwrap();
    let v = tape.values(y);
    assert_eq!(&v[..2], &[0.0, 0.0]);
    let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    assert!((v[2] - expect).abs() < 1e-15 && (v[3] + expect).abs() < 1e-15);
    assert!((v[2] - 1.0).abs() < 1e-5);

    let bad = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.layer_norm(x, bad, zeros), Err(Error::Dimension { .. })));
}

#[test]
fn layer_norm_gradient_check() {
    let x = random_tensor(&[4, 8], 21, 2.0);
    let g = random_tensor(&[8], 22, 1.0);
    let b = random_tensor(&[8], 23, 1.0);
    let w = random_tensor(&[4, 8], 24, 1.0);
    let report = check(&[x, g, b], FD_STEP, |tape, v| {
        let y = tape.layer_norm(v[0], v[1], v[2])?;
        let w = tape.constant(w.clone());
        let y = tape.mul(y, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-5, "{:?}", report.relative_errors);
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let loss = tape.sum(x);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), Some(&[1.0, 1.0, 1.0][..]));

    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![2.0, -1.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), Some(&[4.0, -2.0][..]));
}

#[test]
fn backward_accumulates_until_zeroed() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![2.0, -1.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), Some(&[8.0, -4.0][..]));
    tape.zero_grads();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x), Some(&[4.0, -2.0][..]));
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.tanh(x);
    assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
}

#[test]
fn disconnected_tensor_gets_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let unused = tape.param(Tensor::vector(vec![5.0]));
    let loss = tape.sum(x);
    tape.backward(loss).unwrap();
    assert!(tape.grad(unused).is_none());
}

#[test]
fn every_reachable_tracked_node_gets_a_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(random_tensor(&[2, 3], 31, 1.0));
    let c = tape.constant(random_tensor(&[3, 2], 32, 1.0));
    let h = tape.matmul(x, c).unwrap();
    let h = tape.tanh(h);
    let loss = tape.sum(h);
    tape.backward(loss).unwrap();
    for v in [x, h, loss] {
        assert!(tape.grad(v).is_some());
        assert_eq!(tape.grad(v).unwrap().len(), tape.value(v).len());
    }
    assert!(tape.grad(c).is_none());
}

#[test]
fn shape_ops_gradients() {
    let x = random_tensor(&[2, 3, 4], 41, 1.0);
    let w = random_tensor(&[4, 2, 3], 42, 1.0);
    let report = check(&[x], FD_STEP, |tape, v| {
        let p = tape.permute(v[0], &[2, 0, 1])?;
        let w = tape.constant(w.clone());
        let p = tape.mul(p, w)?;
        let s = tape.slice(p, 1, 1, 1)?;
        let r = tape.reshape(s, &[4, 3])?;
        let sel = tape.select(p, 2, 2)?;
        let st = tape.stack(&[r, r], 0)?;
        let cat = tape.concat(&[sel, sel], 1)?;
        let rep = tape.repeat(r, 1, 2)?;
        let a = tape.sum(st);
        let b = tape.sum(cat);
        let c = tape.elu(rep);
        let c = tape.sum(c);
        let ab = tape.add(a, b)?;
        let ab = tape.scale(ab, 0.5);
        tape.add(ab, c)
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-7, "{:?}", report.relative_errors);
}

#[test]
fn permute_and_transpose_values() {
    let mut tape = Tape::new();
    let x = tape.constant(t2(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
    let y = tape.transpose(x).unwrap();
    assert_eq!(tape.shape(y), &[3, 2]);
    assert_eq!(tape.values(y), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    assert!(tape.permute(x, &[0, 0]).is_err());
}

#[test]
fn causal_conv_gradient_check() {
    let x = random_tensor(&[2, 3, 9], 51, 1.0);
    let w = random_tensor(&[4, 3, 3], 52, 1.0);
    let b = random_tensor(&[4], 53, 1.0);
    let m = random_tensor(&[2, 4, 9], 54, 1.0);
    for dilation in [1, 2, 4] {
        let report = check(&[x.clone(), w.clone(), b.clone()], FD_STEP, |tape, v| {
            let y = tape.causal_conv1d(v[0], v[1], Some(v[2]), dilation)?;
            let m = tape.constant(m.clone());
            let y = tape.mul(y, m)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(report.max_relative_error() < 1e-7, "d={dilation}: {:?}", report.relative_errors);
    }
}

#[test]
fn lstm_cell_gradient_check() {
    let gates = random_tensor(&[2, 12], 61, 1.5);
    let c_prev = random_tensor(&[2, 3], 62, 1.0);
    let w = random_tensor(&[2, 6], 63, 1.0);
    let report = check(&[gates, c_prev], FD_STEP, |tape, v| {
        let y = tape.lstm_cell(v[0], v[1])?;
        let w = tape.constant(w.clone());
        let y = tape.mul(y, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_relative_error() < 1e-7, "{:?}", report.relative_errors);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_stochastic(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], values).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.values(y).chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised(values in proptest::collection::vec(-10.0f64..10.0, 16), spread in 1.0f64..5.0) {
        // Add a ramp so every row's variance dwarfs the epsilon.
        let values: Vec<f64> = values.iter().enumerate().map(|(i, v)| v + spread * (i % 8) as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 8], values).unwrap());
        let g = tape.constant(Tensor::full(&[8], 1.0));
        let b = tape.constant(Tensor::zeros(&[8]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for (row, input) in tape.values(y).chunks(8).zip(tape.values(x).chunks(8)) {
            let in_mean = input.iter().sum::<f64>() / 8.0;
            let in_var = input.iter().map(|v| (v - in_mean).powi(2)).sum::<f64>() / 8.0;
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - in_var / (in_var + LAYER_NORM_EPS)).abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn elementwise_ops_pass_gradient_check(seed in 0u64..1000) {
        let x = random_tensor(&[3, 4], seed, 2.0);
        let y = random_tensor(&[3, 4], seed + 1, 2.0);
        let report = check(&[x, y], FD_STEP, |tape, v| {
            let a = tape.sigmoid(v[0]);
            let b = tape.tanh(v[1]);
            let c = tape.mul(a, b)?;
            let d = tape.add(c, v[0])?;
            let e = tape.relu(d);
            Ok(tape.sum(e))
        }).unwrap();
        prop_assert!(report.max_relative_error() < 1e-4);
    }
}
