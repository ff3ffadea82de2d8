//! Mini-batch SGD trainer for the in-scope MLP architectures.
//!
//! Runs are bit-reproducible: the shuffle order and weight init derive
//! from the config seed, and batch gradients are reduced over fixed-size
//! chunks in a fixed order, so the result is identical for any worker
//! count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::net::{softmax, Activation, DenseLayer, FeedForwardModel, LayerGradient, Normalization};
use crate::{Error, Result};

/// Gradient chunks are summed in index order, independent of how many
/// workers computed them.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Hidden layer widths, e.g. [100, 100, 100].
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            hidden: vec![100, 100, 100],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
}

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seed-derived.
pub fn init_model(
    input_dim: usize,
    num_classes: usize,
    hidden: &[usize],
    normalization: Normalization,
    seed: u64,
) -> Result<FeedForwardModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(num_classes);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let bias = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
        let activation = if layers.len() + 1 == dims.len() - 1 {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(DenseLayer::new(fan_in, fan_out, activation, weights, bias)?);
    }
    FeedForwardModel::new(input_dim, num_classes, normalization, layers)
}

struct BatchResult {
    grads: Vec<LayerGradient>,
    loss_sum: f64,
    correct: usize,
}

/// Gradients of the mean cross-entropy over the batch, plus the summed
/// loss and correct-prediction count at the current parameters.
fn batch_backward(
    model: &FeedForwardModel,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<BatchResult> {
    let n = inputs.len();
    let scale = 1.0 / n as f64;
    let chunks: Vec<BatchResult> = inputs
        .par_chunks(GRAD_CHUNK)
        .zip(labels.par_chunks(GRAD_CHUNK))
        .map(|(xs, ys)| -> Result<BatchResult> {
            let mut grads = model.zero_gradients();
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for (&x, &label) in xs.iter().zip(ys) {
                let trace = model.forward_trace(x)?;
                let surface = crate::net::error_surface_from_logits(trace.logits());
                loss_sum += surface.y[label];
                if surface.predicted == label {
                    correct += 1;
                }
                let mut seed = softmax(trace.logits());
                seed[label] -= 1.0;
                for v in &mut seed {
                    *v *= scale;
                }
                model.backprop(&trace, &seed, Some(&mut grads));
            }
            Ok(BatchResult {
                grads,
                loss_sum,
                correct,
            })
        })
        .collect::<Result<_>>()?;

    let mut total = BatchResult {
        grads: model.zero_gradients(),
        loss_sum: 0.0,
        correct: 0,
    };
    for chunk in chunks {
        total.loss_sum += chunk.loss_sum;
        total.correct += chunk.correct;
        for (acc, g) in total.grads.iter_mut().zip(chunk.grads) {
            for (a, w) in acc.weights.iter_mut().zip(g.weights) {
                *a += w;
            }
            for (a, b) in acc.bias.iter_mut().zip(g.bias) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// Exact reverse-mode gradients of the mean batch cross-entropy with
/// respect to every weight and bias.
pub fn parameter_gradients(
    model: &FeedForwardModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<Vec<LayerGradient>> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::InvalidConfig(
            "batch inputs and labels must be non-empty and equal length".into(),
        ));
    }
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    Ok(batch_backward(model, &refs, labels)?.grads)
}

/// Trains an MLP on the (already normalized) dataset with plain SGD.
/// The last partial batch is included.
pub fn train(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<(FeedForwardModel, TrainLog)> {
    cfg.validate()?;
    let stats = dataset
        .normalization
        .clone()
        .ok_or_else(|| Error::InvalidConfig("train expects a normalized dataset".into()))?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    let mut model = init_model(
        dataset.input_dim(),
        dataset.num_classes,
        &cfg.hidden,
        stats,
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&i| dataset.inputs[i].as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let result = batch_backward(&model, &inputs, &labels)?;
            loss_sum += result.loss_sum;
            correct += result.correct;
            for (layer, grad) in model.layers.iter_mut().zip(&result.grads) {
                for (w, g) in layer.weights.iter_mut().zip(&grad.weights) {
                    *w -= cfg.learning_rate * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= cfg.learning_rate * g;
                }
            }
        }
        let mean_loss = loss_sum / dataset.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        log.epoch_loss.push(mean_loss);
        log.epoch_accuracy.push(correct as f64 / dataset.len() as f64);
    }
    Ok((model, log))
}

/// Fraction of inputs whose predicted class equals the label.
pub fn evaluate_accuracy(model: &FeedForwardModel, dataset: &LabeledDataset) -> Result<f64> {
    let correct = dataset
        .inputs
        .par_iter()
        .zip(&dataset.labels)
        .map(|(x, &label)| -> Result<usize> {
            Ok(usize::from(model.predicted_class(x)? == label))
        })
        .try_reduce(|| 0usize, |a, b| Ok(a + b))?;
    Ok(correct as f64 / dataset.len() as f64)
}
