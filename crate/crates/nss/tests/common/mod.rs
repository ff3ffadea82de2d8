#![allow(dead_code)]

//! Shared fixtures for the integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nss::net::{Activation, DenseLayer, FeedForwardModel, Normalization};
use nss::train::init_model;

/// Small random relu MLP with identity normalization.
pub fn random_model(
    input_dim: usize,
    hidden: &[usize],
    num_classes: usize,
    seed: u64,
) -> FeedForwardModel {
    init_model(input_dim, num_classes, hidden, Normalization::identity(), seed).unwrap()
}

pub fn random_input(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central finite differences of y[class] with respect to x.
pub fn fd_gradient(model: &FeedForwardModel, x: &[f64], class: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let yp = model.per_class_error(&plus).unwrap().y[class];
            let ym = model.per_class_error(&minus).unwrap().y[class];
            (yp - ym) / (2.0 * h)
        })
        .collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// Single-layer linear model: logits = A x + b, identity activation.
pub fn linear_model(a: &[Vec<f64>], b: &[f64]) -> FeedForwardModel {
    let out_dim = a.len();
    let in_dim = a[0].len();
    let weights = a.iter().flatten().copied().collect();
    let layer = DenseLayer::new(in_dim, out_dim, Activation::Identity, weights, b.to_vec()).unwrap();
    FeedForwardModel::new(in_dim, out_dim, Normalization::identity(), vec![layer]).unwrap()
}

/// A model that produces the given logits for every input (zero weights).
pub fn constant_logits_model(input_dim: usize, logits: &[f64]) -> FeedForwardModel {
    let k = logits.len();
    let layer = DenseLayer::new(
        input_dim,
        k,
        Activation::Identity,
        vec![0.0; input_dim * k],
        logits.to_vec(),
    )
    .unwrap();
    FeedForwardModel::new(input_dim, k, Normalization::identity(), vec![layer]).unwrap()
}
