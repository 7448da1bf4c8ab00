//! Finite-difference checks of every recorded primitive, driven through the
//! tape so the backward pass under test is the one training uses.

mod common;

use common::fd::{central, max_rel_err};
use lident_core::nn::ops::{dropout_mask, softmax_cross_entropy};
use lident_core::nn::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d(loss)/d(input k) for a graph built by `build`, where the loss
/// is a fixed random projection of the graph output, passed through a
/// softmax cross-entropy so the tape sees a scalar.
fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
    let run = |xs: &[Tensor], want: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars);
        let len = tape.value(out).unwrap().len();
        let flat = if tape.value(out).unwrap().rank() == 1 {
            out
        } else {
            let rows = tape.value(out).unwrap().shape()[0];
            let parts: Vec<Var> = (0..rows).map(|r| tape.row(out, r).unwrap()).collect();
            tape.concat(&parts).unwrap()
        };
        let proj = Tensor::new(vec![3, len], (0..3 * len).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect()).unwrap();
        let w = tape.constant(proj).unwrap();
        let b = tape.constant(Tensor::zeros(&[3])).unwrap();
        let z = tape.dense(flat, w, b).unwrap();
        let (loss, _) = tape.softmax_cross_entropy(z, 1).unwrap();
        let value = tape.value(loss).unwrap().data()[0];
        if !want {
            return (value, vec![]);
        }
        let g = tape.backward(loss).unwrap();
        (value, vars.iter().map(|&v| g.wrt(v).unwrap()).collect())
    };
    let (_, grads) = run(&inputs, true);
    for k in 0..inputs.len() {
        let mut xs = inputs.clone();
        let mut flat = xs[k].data().to_vec();
        let numeric = central(&mut flat, H, |x| {
            xs[k].data_mut().copy_from_slice(x);
            run(&xs, false).0
        });
        let err = max_rel_err(grads[k].data(), &numeric);
        assert!(err < TOL, "input {k}: relative error {err}");
    }
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(
        vec![random(&[9, 3], &mut rng), random(&[2, 4, 3], &mut rng), random(&[2], &mut rng)],
        |t, v| t.conv1d(v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn relu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check(vec![random(&[5, 3], &mut rng)], |t, v| t.relu(v[0]).unwrap());
}

#[test]
fn maxpool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(vec![random(&[10, 2], &mut rng)], |t, v| t.maxpool1d(v[0], 3).unwrap());
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(
        vec![random(&[4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)],
        |t, v| t.dense(v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn lstm_gradients_both_directions() {
    for reverse in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(
            vec![
                random(&[6, 3], &mut rng),
                random(&[8, 3], &mut rng),
                random(&[8, 2], &mut rng),
                random(&[8], &mut rng),
            ],
            move |t, v| t.lstm(v[0], v[1], v[2], v[3], reverse).unwrap(),
        );
    }
}

#[test]
fn row_concat_mean_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(&[4, 3], &mut rng), random(&[2], &mut rng)], |t, v| {
        let a = t.row(v[0], 3).unwrap();
        let b = t.row(v[0], 0).unwrap();
        t.concat(&[a, v[1], b]).unwrap()
    });
}

#[test]
fn dropout_gradients_in_train_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    check(vec![random(&[12], &mut rng)], |t, v| t.dropout(v[0], 0.5, 17, true).unwrap());
}

#[test]
fn softmax_and_mean_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![random(&[4], &mut rng), random(&[4], &mut rng)];
    let run = |xs: &[Tensor], want: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone()).unwrap()).collect();
        let (l0, _) = tape.softmax_cross_entropy(vars[0], 2).unwrap();
        let (l1, _) = tape.softmax_cross_entropy(vars[1], 0).unwrap();
        let loss = tape.mean(&[l0, l1]).unwrap();
        let value = tape.value(loss).unwrap().data()[0];
        let grads = if want {
            let g = tape.backward(loss).unwrap();
            vars.iter().map(|&v| g.wrt(v).unwrap()).collect()
        } else {
            vec![]
        };
        (value, grads)
    };
    let (_, grads): (f64, Vec<Tensor>) = run(&inputs, true);
    for k in 0..2 {
        let mut xs = inputs.clone();
        let mut flat = xs[k].data().to_vec();
        let numeric = central(&mut flat, H, |x| {
            xs[k].data_mut().copy_from_slice(x);
            run(&xs, false).0
        });
        assert!(max_rel_err(grads[k].data(), &numeric) < TOL);
    }
}

#[test]
fn dropout_preserves_expectation() {
    let rate = 0.3;
    let mask = dropout_mask(100_000, rate, 12345).unwrap();
    let n = mask.len() as f64;
    let mean = mask.iter().sum::<f64>() / n;
    // each entry is 1/(1-p) with probability 1-p, else 0
    let sd = (rate / (1.0 - rate)).sqrt() / n.sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd, "mean {mean}, sd {sd}");
    let zeros = mask.iter().filter(|&&m| m == 0.0).count();
    assert!(zeros > 0 && mask.iter().all(|&m| m == 0.0 || (m - 1.0 / (1.0 - rate)).abs() < 1e-15));
}

proptest! {
    #[test]
    fn softmax_probabilities_sum_to_one(z in prop::collection::vec(-50.0f64..50.0, 2..20), offset in -500.0f64..500.0) {
        let shifted: Vec<f64> = z.iter().map(|v| v + offset).collect();
        let (loss, p) = softmax_cross_entropy(&Tensor::vector(shifted), 0).unwrap();
        prop_assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(loss >= 0.0 && loss.is_finite());
        let (base, _) = softmax_cross_entropy(&Tensor::vector(z), 0).unwrap();
        prop_assert!((base - loss).abs() < 1e-9);
    }

    #[test]
    fn conv_pool_shape_algebra(t in 1usize..60, w in 1usize..9, p in 1usize..5, ch in 1usize..4, f in 1usize..4) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[t, ch], 0.5)).unwrap();
        let k = tape.constant(Tensor::filled(&[f, w, ch], 0.1)).unwrap();
        let b = tape.constant(Tensor::zeros(&[f])).unwrap();
        match tape.conv1d(x, k, b) {
            Ok(y) => {
                prop_assert!(t >= w);
                prop_assert_eq!(tape.value(y).unwrap().shape(), &[t - w + 1, f][..]);
                match tape.maxpool1d(y, p) {
                    Ok(z) => prop_assert_eq!(tape.value(z).unwrap().shape(), &[(t - w + 1) / p, f][..]),
                    Err(_) => prop_assert!((t - w + 1) < p),
                }
            }
            Err(_) => prop_assert!(t < w),
        }
    }
}
