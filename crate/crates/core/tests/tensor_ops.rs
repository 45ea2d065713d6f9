use diffformer::tensor::{finite_diff_grad, grad_error, Graph, Rng64, Tensor, TensorError, Var};
use proptest::prelude::*;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;

fn random(rng: &mut Rng64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// Checks `op` against central differences through the scalar
/// `sum(op(inputs) ⊙ R)` for a fixed random `R`.
fn check_op<F>(name: &str, inputs: Vec<Tensor>, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut rng = Rng64::seed(0xC0FFEE);
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|t| g.constant(t)).collect();
        let out = op(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let probe = random(&mut rng, &probe_shape);

    let eval = |values: &[Tensor], grads: bool| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().cloned().map(|t| g.leaf(t, grads)).collect();
        let out = op(&mut g, &vars);
        let r = g.constant(probe.clone());
        let out = if g.shape(out) == [1] {
            out
        } else {
            let prod = g.mul(out, r).unwrap();
            g.sum(prod).unwrap()
        };
        let loss = g.value(out).data()[0];
        if !grads {
            return (loss, Vec::new());
        }
        g.backward(out).unwrap();
        let gs = vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        (loss, gs)
    };

    let (_, analytic) = eval(&inputs, true);
    for (slot, input) in inputs.iter().enumerate() {
        let numeric = finite_diff_grad(
            |theta| {
                let mut vals = inputs.clone();
                vals[slot] = Tensor::new(input.shape(), theta.to_vec()).unwrap();
                eval(&vals, false).0
            },
            input.data(),
            STEP,
        );
        let err = grad_error(analytic[slot].data(), &numeric, REL_TOL, ABS_TOL);
        assert!(
            err.passed(),
            "{name} input {slot}: max rel {:.3e}, max abs {:.3e}",
            err.max_rel,
            err.max_abs
        );
    }
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let b = g.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
    let z = g.constant(Tensor::zeros(&[2, 2]));

    let c = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    let c = g.matmul(a, z).unwrap();
    assert_eq!(g.value(c).data(), &[0.0; 4]);
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(TensorError::Shape { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    let msg = g.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[
        vec![0.0, 0.0, 0.0],
        vec![1.0, 2.0, 3.0],
        vec![7.5, 7.5, 7.5],
    ]));
    let y = g.softmax_rows(x).unwrap();
    let y = g.value(y);
    for v in &y.data()[0..3] {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    // exp(k)/(e + e² + e³) evaluated independently
    let e1 = 1f64.exp();
    let denom = e1 + e1 * e1 + e1 * e1 * e1;
    let want = [e1 / denom, e1 * e1 / denom, e1 * e1 * e1 / denom];
    for (got, w) in y.row(1).iter().zip(want) {
        assert!((got - w).abs() < 1e-12);
    }
    assert!((y.at2(1, 0) - 0.09003).abs() < 1e-5);
    assert!((y.at2(1, 1) - 0.24473).abs() < 1e-5);
    assert!((y.at2(1, 2) - 0.66524).abs() < 1e-5);
    for v in y.row(2) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_rejects_non_finite_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.0, f64::NAN]]));
    assert!(matches!(g.softmax_rows(x), Err(TensorError::NonFinite { .. })));
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let ones = g.constant(Tensor::ones(&[2]));
    let zeros = g.constant(Tensor::zeros(&[2]));
    let fives = g.constant(Tensor::full(&[2], 5.0));

    let x = g.constant(Tensor::from_rows(&[vec![3.0, 3.0]]));
    let y = g.layer_norm(x, ones, zeros, 1e-3).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let x = g.constant(Tensor::from_rows(&[vec![1.0, -1.0]]));
    let y = g.layer_norm(x, ones, zeros, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -1.0]);

    let x = g.constant(Tensor::from_rows(&[vec![2.0, 4.0]]));
    let y = g.layer_norm(x, ones, fives, 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0]);
}

#[test]
fn sigmoid_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[4], vec![0.0, -50.0, 50.0, 1.0]).unwrap());
    let y = g.sigmoid(x).unwrap();
    let y = g.value(y).data();
    assert_eq!(y[0], 0.5);
    assert!(y[1].abs() < 1e-15);
    assert!((y[2] - 1.0).abs() < 1e-15);
    assert!((y[3] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
    assert!((y[3] - 0.731058).abs() < 1e-6);
}

#[test]
fn dropout_modes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[100_000]));
    let mut rng = Rng64::seed(11);
    assert_eq!(g.dropout(x, 0.0, Some(&mut rng)).unwrap(), x);
    assert_eq!(g.dropout(x, 0.7, None).unwrap(), x);
    let y = g.dropout(x, 0.5, Some(&mut rng)).unwrap();
    let vals = g.value(y).data();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    assert!(g.dropout(x, 1.0, Some(&mut rng)).is_err());
}

#[test]
fn unfold_examples() {
    let mut g = Graph::new();
    // P = p: single flattened row
    let cube = Tensor::new(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
    let x = g.constant(cube.clone());
    let y = g.unfold_patches_3d(x, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 12]);
    assert_eq!(g.value(y).data(), cube.data());

    // quadrant-constant 4x4x1 cube
    let mut vals = vec![0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            vals[r * 4 + c] = (1 + (r / 2) * 2 + c / 2) as f64;
        }
    }
    let x = g.constant(Tensor::new(&[4, 4, 1], vals).unwrap());
    let y = g.unfold_patches_3d(x, 2).unwrap();
    assert_eq!(g.shape(y), &[4, 4]);
    for (i, row) in g.value(y).data().chunks(4).enumerate() {
        assert_eq!(row, &[(i + 1) as f64; 4]);
    }

    let x = g.constant(Tensor::zeros(&[6, 6, 2]));
    let y = g.unfold_patches_3d(x, 3).unwrap();
    assert_eq!(g.shape(y), &[4, 18]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    assert!(matches!(g.unfold_patches_3d(x, 4), Err(TensorError::Config(_))));
}

#[test]
fn unfold_backward_of_ones_counts_each_cell_once() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[3, 6, 6, 2]));
    let y = g.unfold_patches_3d(x, 2).unwrap();
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(&[2, 3], vec![0.3; 6]).unwrap());
    let loss = g.sum(x).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);

    let mut g = Graph::new();
    let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    // repeated backward accumulates
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0, 12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.param(Tensor::ones(&[2]));
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar { .. })));
}

#[test]
fn check_finite_mode_flags_overflow() {
    let mut g = Graph::new();
    g.set_check_finite(true);
    let x = g.constant(Tensor::full(&[2], f64::MAX));
    assert!(matches!(g.scale(x, 10.0), Err(TensorError::NonFinite { op: "scale" })));
}

#[test]
fn forward_replay_is_bit_identical() {
    let run = || {
        let mut rng = Rng64::seed(77);
        let mut g = Graph::new();
        let x = g.constant(random(&mut rng, &[5, 4]));
        let w = g.constant(random(&mut rng, &[4, 4]));
        let h = g.matmul(x, w).unwrap();
        let h = g.dropout(h, 0.3, Some(&mut rng)).unwrap();
        let h = g.softmax_rows(h).unwrap();
        g.value(h).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

// ---------------------------------------------------------------------------
// finite-difference checks, one per differentiable op
// ---------------------------------------------------------------------------

#[test]
fn gradients_of_linear_algebra_ops() {
    let mut rng = Rng64::seed(1);
    check_op(
        "matmul",
        vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])],
        |g, v| g.matmul(v[0], v[1]).unwrap(),
    );
    check_op(
        "batch_matmul",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 5])],
        |g, v| g.batch_matmul(v[0], v[1], false).unwrap(),
    );
    check_op(
        "batch_matmul_nt",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 5, 4])],
        |g, v| g.batch_matmul(v[0], v[1], true).unwrap(),
    );
    check_op("transpose", vec![random(&mut rng, &[3, 5])], |g, v| {
        g.transpose(v[0]).unwrap()
    });
}

#[test]
fn gradients_of_elementwise_ops() {
    let mut rng = Rng64::seed(2);
    check_op(
        "add",
        vec![random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])],
        |g, v| g.add(v[0], v[1]).unwrap(),
    );
    check_op(
        "add_bias",
        vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[4])],
        |g, v| g.add_bias(v[0], v[1]).unwrap(),
    );
    check_op(
        "add_tiled",
        vec![random(&mut rng, &[6, 4]), random(&mut rng, &[3, 4])],
        |g, v| g.add_tiled(v[0], v[1]).unwrap(),
    );
    check_op(
        "mul",
        vec![random(&mut rng, &[3, 4]), random(&mut rng, &[3, 4])],
        |g, v| g.mul(v[0], v[1]).unwrap(),
    );
    check_op("mul_self", vec![random(&mut rng, &[5])], |g, v| {
        g.mul(v[0], v[0]).unwrap()
    });
    check_op("scale", vec![random(&mut rng, &[3, 4])], |g, v| {
        g.scale(v[0], -2.5).unwrap()
    });
    check_op("sigmoid", vec![random(&mut rng, &[3, 4])], |g, v| {
        g.sigmoid(v[0]).unwrap()
    });
    check_op("softmax_rows", vec![random(&mut rng, &[2, 3, 5])], |g, v| {
        g.softmax_rows(v[0]).unwrap()
    });
    check_op(
        "layer_norm",
        vec![
            random(&mut rng, &[4, 6]),
            random(&mut rng, &[6]),
            random(&mut rng, &[6]),
        ],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-3).unwrap(),
    );
    check_op("diff_cols", vec![random(&mut rng, &[2, 3, 5])], |g, v| {
        g.diff_cols(v[0]).unwrap()
    });
}

#[test]
fn gradient_of_dropout_uses_the_forward_mask() {
    let mut rng = Rng64::seed(3);
    let input = random(&mut rng, &[4, 5]);
    check_op("dropout", vec![input], |g, v| {
        let mut mask_rng = Rng64::seed(99);
        g.dropout(v[0], 0.4, Some(&mut mask_rng)).unwrap()
    });
}

#[test]
fn gradients_of_layout_ops() {
    let mut rng = Rng64::seed(4);
    check_op("unfold_patches_3d", vec![random(&mut rng, &[2, 4, 4, 3])], |g, v| {
        g.unfold_patches_3d(v[0], 2).unwrap()
    });
    check_op("split_heads", vec![random(&mut rng, &[6, 4])], |g, v| {
        g.split_heads(v[0], 2, 2).unwrap()
    });
    check_op("merge_heads", vec![random(&mut rng, &[4, 3, 2])], |g, v| {
        g.merge_heads(v[0], 2, 2).unwrap()
    });
    check_op(
        "append_token",
        vec![random(&mut rng, &[6, 3]), random(&mut rng, &[3])],
        |g, v| g.append_token(v[0], v[1], 2).unwrap(),
    );
    check_op("last_rows", vec![random(&mut rng, &[6, 3])], |g, v| {
        g.last_rows(v[0], 3).unwrap()
    });
    check_op(
        "concat_rows",
        vec![random(&mut rng, &[2, 3]), random(&mut rng, &[4, 3])],
        |g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
    );
    check_op("slice_rows", vec![random(&mut rng, &[5, 3])], |g, v| {
        g.slice_rows(v[0], 1, 4).unwrap()
    });
    check_op("reshape", vec![random(&mut rng, &[2, 6])], |g, v| {
        g.reshape(v[0], &[3, 4]).unwrap()
    });
}

#[test]
fn gradients_of_reductions() {
    let mut rng = Rng64::seed(5);
    check_op("sum", vec![random(&mut rng, &[3, 4])], |g, v| g.sum(v[0]).unwrap());
    check_op("mean", vec![random(&mut rng, &[3, 4])], |g, v| g.mean(v[0]).unwrap());
    check_op("softmax_cross_entropy", vec![random(&mut rng, &[4, 3])], |g, v| {
        g.softmax_cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()
    });
}

#[test]
fn split_then_merge_is_identity() {
    let mut rng = Rng64::seed(6);
    let t = random(&mut rng, &[12, 8]);
    let mut g = Graph::new();
    let x = g.constant(t.clone());
    let s = g.split_heads(x, 3, 4).unwrap();
    assert_eq!(g.shape(s), &[12, 4, 2]);
    let m = g.merge_heads(s, 3, 4).unwrap();
    assert_eq!(g.value(m), &t);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions_and_shift_invariant(
        row in proptest::collection::vec(-30.0f64..30.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let n = row.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, n], row.clone()).unwrap());
        let xs = g.constant(Tensor::new(&[1, n], row.iter().map(|v| v + shift).collect()).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let ys = g.softmax_rows(xs).unwrap();
        let total: f64 = g.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(g.value(y).data().iter().all(|&p| p >= 0.0));
        prop_assert!(g.value(y).max_abs_diff(g.value(ys)) < 1e-12);
    }
}
