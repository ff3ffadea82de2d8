mod common;

use common::*;
use nss::net::{Activation, DenseLayer, FeedForwardModel, Normalization};
use nss::tensor::Tensor;

fn forward_vec(model: &FeedForwardModel, x: &[f64]) -> Vec<f64> {
    model
        .forward(&Tensor::vector(x.to_vec()).unwrap())
        .unwrap()
        .into_vec()
}

#[test]
fn forward_identity_layer() {
    let model = linear_model(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
    assert_eq!(forward_vec(&model, &[1.0, 2.0]), vec![1.0, 2.0]);
}

#[test]
fn forward_relu_clamps_negative() {
    let hidden = DenseLayer::new(
        2,
        2,
        Activation::Relu,
        vec![1.0, 0.0, 0.0, -1.0],
        vec![0.0, 0.0],
    )
    .unwrap();
    let readout = DenseLayer::new(
        2,
        2,
        Activation::Identity,
        vec![1.0, 0.0, 0.0, 1.0],
        vec![0.0, 0.0],
    )
    .unwrap();
    let model =
        FeedForwardModel::new(2, 2, Normalization::identity(), vec![hidden, readout]).unwrap();
    assert_eq!(forward_vec(&model, &[3.0, 5.0]), vec![3.0, 0.0]);
}

// Straight-line matmul + relu evaluation, independent of the library's
// forward pass.
#[test]
fn forward_matches_matmul_oracle() {
    let model = random_model(4, &[6, 5], 3, 42);
    let x = vec![1.0; 4];
    let mut a = x.clone();
    for (li, layer) in model.layers.iter().enumerate() {
        let mut next = vec![0.0; layer.out_dim];
        for (i, n) in next.iter_mut().enumerate() {
            let mut acc = layer.bias[i];
            for (j, &aj) in a.iter().enumerate() {
                acc += layer.weights[i * layer.in_dim + j] * aj;
            }
            *n = if li + 1 < model.layers.len() { acc.max(0.0) } else { acc };
        }
        a = next;
    }
    let got = forward_vec(&model, &x);
    for (g, e) in got.iter().zip(&a) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}

#[test]
fn error_surface_symmetric_logits() {
    let model = constant_logits_model(3, &[0.0, 0.0]);
    let s = model.per_class_error(&[0.3, -0.1, 0.9]).unwrap();
    assert!((s.y[0] - 2f64.ln()).abs() < 1e-12);
    assert!((s.y[1] - 2f64.ln()).abs() < 1e-12);
    assert_eq!(s.predicted, 0); // tie breaks to the lowest index
}

#[test]
fn error_surface_spread_logits() {
    let model = constant_logits_model(2, &[10.0, 0.0]);
    let s = model.per_class_error(&[0.0, 0.0]).unwrap();
    let p0 = 1.0 / (1.0 + (-10.0f64).exp());
    assert!((s.y[0] - (-p0.ln())).abs() < 1e-9);
    assert!((s.y[0] - 4.54e-5).abs() < 1e-6);
    assert!((s.y[1] - 10.0000454).abs() < 1e-4);
    assert_eq!(s.predicted, 0);
}

#[test]
fn error_surface_probabilities_sum_to_one() {
    for seed in 0..10 {
        let model = random_model(5, &[8], 4, seed);
        let x = random_input(5, seed + 100);
        let s = model.per_class_error(&x).unwrap();
        let total: f64 = s.y.iter().map(|&y| (-y).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(s.y.iter().all(|&y| y >= 0.0));
    }
}

#[test]
fn predicted_class_examples() {
    let model = constant_logits_model(2, &[1.0, 3.0, 2.0]);
    assert_eq!(model.predicted_class(&[0.0, 0.0]).unwrap(), 1);
    let tied = constant_logits_model(2, &[7.0, 7.0, 7.0]);
    assert_eq!(tied.predicted_class(&[0.0, 0.0]).unwrap(), 0);
}

#[test]
fn predicted_class_shift_invariant() {
    for seed in 0..5 {
        let model = random_model(4, &[6], 3, seed);
        let x = random_input(4, seed);
        let base = model.predicted_class(&x).unwrap();
        // Shift every logit by the same constant via the readout bias.
        let mut shifted = model.clone();
        for b in &mut shifted.layers.last_mut().unwrap().bias {
            *b += 17.5;
        }
        assert_eq!(shifted.predicted_class(&x).unwrap(), base);
    }
}

#[test]
fn input_gradient_constant_model_is_zero() {
    let model = constant_logits_model(3, &[0.5, -0.5]);
    let g = model.input_gradient(&[1.0, 2.0, 3.0], 0).unwrap();
    assert_eq!(g, vec![0.0, 0.0, 0.0]);
}

// For logits = A x with K=2: grad of y_0 is (1 - p_0)(A_1 - A_0).
#[test]
fn input_gradient_two_class_linear_closed_form() {
    let a = [vec![0.7, -0.3, 0.2], vec![-0.1, 0.5, 0.4]];
    let model = linear_model(&a, &[0.0, 0.0]);
    let x = [0.4, 1.2, -0.8];
    let z0 = a[0].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
    let z1 = a[1].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
    let p0 = (z0 - z0.max(z1)).exp() / ((z0 - z0.max(z1)).exp() + (z1 - z0.max(z1)).exp());
    let grad = model.input_gradient(&x, 0).unwrap();
    for j in 0..3 {
        let expected = (1.0 - p0) * (a[1][j] - a[0][j]);
        assert!((grad[j] - expected).abs() < 1e-12);
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let model = random_model(6, &[10, 8], 4, seed);
        let x = random_input(6, seed + 50);
        for class in 0..4 {
            let g = model.input_gradient(&x, class).unwrap();
            let fd = fd_gradient(&model, &x, class, 1e-4);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5, "seed {seed} class {class}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn data_jacobian_rows_equal_input_gradients() {
    let model = random_model(5, &[7], 3, 9);
    let x = random_input(5, 9);
    let jac = model.data_jacobian(&x).unwrap();
    for i in 0..3 {
        let g = model.input_gradient(&x, i).unwrap();
        assert_eq!(jac.row(i), g.as_slice());
    }
}

#[test]
fn data_jacobian_two_class_linear_closed_form() {
    let a = [vec![1.0, 2.0], vec![-1.0, 0.5]];
    let model = linear_model(&a, &[0.1, -0.2]);
    let x = [0.3, -0.6];
    let jac = model.data_jacobian(&x).unwrap();
    let s = model.per_class_error(&x).unwrap();
    let p: Vec<f64> = s.y.iter().map(|&y| (-y).exp()).collect();
    // Row i of the error-surface Jacobian is sum_k (p_k - [k==i]) A_k.
    for i in 0..2 {
        for j in 0..2 {
            let expected: f64 = (0..2)
                .map(|k| (p[k] - f64::from(u8::from(k == i))) * a[k][j])
                .sum();
            assert!((jac.row(i)[j] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_residual_exact_zero_for_linear_model() {
    let model = linear_model(&[vec![1.0, 2.0, 3.0], vec![0.5, -0.5, 1.5]], &[0.2, 0.4]);
    let x = [0.1, 0.2, 0.3];
    let dx = [0.05, -0.02, 0.07];
    let res = model.linear_residual_logits(&x, &dx).unwrap();
    for r in res {
        assert!(r.abs() < 1e-12);
    }
}

#[test]
fn linear_residual_shrinks_with_step() {
    let model = random_model(4, &[10, 10], 3, 3);
    let x = random_input(4, 13);
    let dir = random_input(4, 14);
    let norm = l2(&dir);
    let mut last = f64::INFINITY;
    for scale in [1e-2, 1e-3, 1e-4] {
        let dx: Vec<f64> = dir.iter().map(|d| d / norm * scale).collect();
        let res = model.linear_residual_errors(&x, &dx).unwrap();
        let res_norm = l2(&res);
        assert!(res_norm < last, "residual should shrink: {res_norm} vs {last}");
        last = res_norm;
    }
}

#[test]
fn model_json_round_trip() {
    let model = random_model(3, &[4], 2, 7);
    let json = model.to_json().unwrap();
    let back = FeedForwardModel::from_json(&json).unwrap();
    assert_eq!(model, back);
}

#[test]
fn dimension_mismatch_rejected() {
    let model = random_model(3, &[4], 2, 7);
    assert!(model.per_class_error(&[1.0, 2.0]).is_err());
    assert!(model.input_gradient(&[1.0, 2.0, 3.0], 5).is_err());
}

#[test]
fn invalid_models_rejected() {
    // Chained dims must match.
    let l1 = DenseLayer::new(2, 3, Activation::Relu, vec![0.0; 6], vec![0.0; 3]).unwrap();
    let l2 = DenseLayer::new(4, 2, Activation::Identity, vec![0.0; 8], vec![0.0; 2]).unwrap();
    assert!(FeedForwardModel::new(2, 2, Normalization::identity(), vec![l1.clone(), l2]).is_err());
    // Last layer must be identity.
    assert!(FeedForwardModel::new(2, 3, Normalization::identity(), vec![l1]).is_err());
}
