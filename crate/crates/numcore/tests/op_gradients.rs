use numcore::{gradient_check, seeded_rng, OpKind, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(rng: &mut numcore::Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, v).unwrap()
}

/// Builds random inputs for `kind` and returns them with the op.
fn instance(seed: u64, which: usize) -> (OpKind, Vec<Tensor<f64>>) {
    let mut rng = seeded_rng(seed);
    let dim = |rng: &mut numcore::Rng| rng.random_range(1..=8usize);
    let (r, c, k) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    match which {
        0 => (
            OpKind::MatMul,
            vec![
                random_tensor(&mut rng, vec![r, k]),
                random_tensor(&mut rng, vec![k, c]),
            ],
        ),
        1 => (
            OpKind::Add,
            vec![
                random_tensor(&mut rng, vec![r, c]),
                random_tensor(&mut rng, vec![r, c]),
            ],
        ),
        2 => (
            OpKind::Mul,
            vec![
                random_tensor(&mut rng, vec![r, c]),
                random_tensor(&mut rng, vec![r, c]),
            ],
        ),
        3 => (OpKind::Tanh, vec![random_tensor(&mut rng, vec![r, c])]),
        4 => (OpKind::Sigmoid, vec![random_tensor(&mut rng, vec![r, c])]),
        5 => {
            let axis = rng.random_range(0..2usize);
            let mut other = vec![r, c];
            other[axis] = k;
            (
                OpKind::Concat { axis },
                vec![
                    random_tensor(&mut rng, vec![r, c]),
                    random_tensor(&mut rng, other),
                ],
            )
        }
        6 => {
            let axis = rng.random_range(0..2usize);
            let size = [r, c][axis];
            let start = rng.random_range(0..size);
            let len = rng.random_range(1..=size - start);
            (
                OpKind::Slice { axis, start, len },
                vec![random_tensor(&mut rng, vec![r, c])],
            )
        }
        7 => (OpKind::Softmax, vec![random_tensor(&mut rng, vec![r, c])]),
        8 => (
            OpKind::LogSoftmax,
            vec![random_tensor(&mut rng, vec![r, c])],
        ),
        9 => {
            let ids = (0..k).map(|_| rng.random_range(0..r)).collect();
            (
                OpKind::Embedding(ids),
                vec![random_tensor(&mut rng, vec![r, c])],
            )
        }
        10 => (
            OpKind::Dropout { p: 0.3, seed },
            vec![random_tensor(&mut rng, vec![r, c])],
        ),
        11 => (OpKind::Sum, vec![random_tensor(&mut rng, vec![r, c])]),
        _ => (OpKind::Mean, vec![random_tensor(&mut rng, vec![r, c])]),
    }
}

/// Contracts the op output with fixed random weights so every output entry
/// contributes a distinct amount to the scalar loss.
fn weighted_loss(tape: &mut Tape<f64>, out: Var, seed: u64) -> numcore::Result<Var> {
    let shape = tape.shape(out).to_vec();
    let mut rng = seeded_rng(seed ^ 0x5eed);
    let w = random_tensor(&mut rng, shape);
    let wv = tape.leaf(w);
    let prod = tape.mul(out, wv)?;
    Ok(tape.sum(prod))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_matches_finite_differences(seed in 0u64..1_000_000) {
        for which in 0..13 {
            let (kind, inputs) = instance(seed, which);
            let err = gradient_check(
                |t, v| {
                    let out = t.forward_op(&kind, v)?;
                    weighted_loss(t, out, seed)
                },
                &inputs,
            )
            .unwrap();
            prop_assert!(err < 1e-4, "{:?} seed {} error {}", kind, seed, err);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..1_000_000) {
        let mut rng = seeded_rng(seed);
        let (r, c) = (rng.random_range(1..=8usize), rng.random_range(1..=8usize));
        let mut t = Tape::new();
        let x = t.leaf(random_tensor(&mut rng, vec![r, c]).clone());
        let scaled = t.scale(x, 30.0);
        let y = t.softmax(scaled);
        for row in t.value(y).chunks(c) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_use_accumulates(seed in 0u64..1_000_000, k in 1usize..5) {
        // k uses of one tensor give the sum of k single-use gradients
        let mut rng = seeded_rng(seed);
        let w = random_tensor(&mut rng, vec![3, 4]).with_grad();
        let xs: Vec<Tensor<f64>> = (0..k).map(|_| random_tensor(&mut rng, vec![4, 2])).collect();

        let mut shared = Tape::new();
        let wv = shared.leaf(w.clone());
        let mut total = None;
        for x in &xs {
            let xv = shared.leaf(x.clone());
            let y = shared.matmul(wv, xv).unwrap();
            let y = shared.tanh(y);
            let s = shared.sum(y);
            total = Some(match total { None => s, Some(acc) => shared.add(acc, s).unwrap() });
        }
        shared.backward(total.unwrap()).unwrap();
        let combined = shared.grad(wv).unwrap().to_vec();

        let mut expected = vec![0.0; 12];
        for x in &xs {
            let mut t = Tape::new();
            let wv = t.leaf(w.clone());
            let xv = t.leaf(x.clone());
            let y = t.matmul(wv, xv).unwrap();
            let y = t.tanh(y);
            let s = t.sum(y);
            t.backward(s).unwrap();
            expected.iter_mut().zip(t.grad(wv).unwrap()).for_each(|(e, g)| *e += g);
        }
        for (a, b) in combined.iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_seed_gives_bitwise_identical_results() {
    let run = || {
        let mut rng = seeded_rng(42);
        let mut t = Tape::new();
        let w = t.leaf(random_tensor(&mut rng, vec![5, 6]).with_grad());
        let x = t.leaf(random_tensor(&mut rng, vec![6, 3]));
        let y = t.matmul(w, x).unwrap();
        let y = t.dropout(y, 0.2, &mut rng).unwrap();
        let l = t.cross_entropy(y, &[0, 2, 1, 1, 0]).unwrap();
        t.backward(l).unwrap();
        (t.value(l).to_vec(), t.grad(w).unwrap().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(
        a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn values_stay_finite_on_finite_inputs() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(
        Tensor::from_f64(vec![2, 3], &[800.0, -800.0, 0.0, 1e3, 1e3, -1e3])
            .unwrap()
            .with_grad(),
    );
    let a = t.softmax(x);
    let b = t.log_softmax(x);
    let c = t.sigmoid(x);
    let d = t.tanh(x);
    let l = t.cross_entropy(x, &[1, 2]).unwrap();
    let parts = [t.sum(a), t.sum(b), t.sum(c), t.sum(d), l];
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = t.add(total, p).unwrap();
    }
    t.backward(total).unwrap();
    for v in [a, b, c, d, l, total] {
        assert!(t.value(v).iter().all(|x| x.is_finite()));
    }
    assert!(t.grad(x).unwrap().iter().all(|g| g.is_finite()));
}

#[test]
fn f32_gradients_within_loose_tolerance() {
    let mut rng = seeded_rng(3);
    let w: Tensor<f32> =
        Tensor::from_f64(vec![3, 4], &random_tensor(&mut rng, vec![3, 4]).to_f64()).unwrap();
    let x: Tensor<f32> =
        Tensor::from_f64(vec![4, 2], &random_tensor(&mut rng, vec![4, 2]).to_f64()).unwrap();
    let err = gradient_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.tanh(y);
            t.cross_entropy(y, &[1, 0, 1])
        },
        &[w, x],
    )
    .unwrap();
    assert!(err < 1e-2, "{err}");
}
