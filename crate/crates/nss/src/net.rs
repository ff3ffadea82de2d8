//! Minimal differentiable feed-forward network.
//!
//! A model is a stack of dense layers mapping an input vector to logits.
//! On top of the logits we define the per-class error surface
//! `y_i = -log softmax_i(logits)`, so the predicted class is the argmin of
//! `y` (equivalently the argmax of the softmax). Reverse-mode sweeps give
//! exact gradients of any `y_i` with respect to the input, and stacking the
//! K gradients gives the full input Jacobian of the error surface.

use serde::{Deserialize, Serialize};

use crate::tensor::{dot, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Feature normalization `x -> (x - mean) / std`.
///
/// `mean`/`std` have either length 1 (scalar stats broadcast over all
/// features, the MNIST case) or one entry per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0],
            std: vec![1.0],
        }
    }

    pub fn scalar(mean: f64, std: f64) -> Self {
        Self {
            mean: vec![mean],
            std: vec![std],
        }
    }

    fn stat(v: &[f64], i: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[i]
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - Self::stat(&self.mean, i)) / Self::stat(&self.std, i))
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| v * Self::stat(&self.std, i) + Self::stat(&self.mean, i))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.std.is_empty() {
            return Err(Error::InvalidConfig("empty normalization stats".into()));
        }
        if self.std.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::ZeroVariance);
        }
        Ok(())
    }
}

/// Dense affine layer `a = activation(W x + b)` with row-major weights
/// of shape (out, in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let layer = Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "layer expects {}x{} = {} weights, got {}",
                self.out_dim,
                self.in_dim,
                self.in_dim * self.out_dim,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::DimensionMismatch(format!(
                "layer expects {} biases, got {}",
                self.out_dim,
                self.bias.len()
            )));
        }
        if !self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.in_dim..(i + 1) * self.in_dim]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|i| dot(self.row(i), x) + self.bias[i])
            .collect()
    }
}

/// Immutable feed-forward classifier: all evaluation paths are pure
/// functions of the arguments, so a model can be shared freely across
/// worker threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardModel {
    pub input_dim: usize,
    pub num_classes: usize,
    pub normalization: Normalization,
    pub layers: Vec<DenseLayer>,
}

/// Per-class error vector for one input, in nats. The predicted class is
/// the argmin of `y` (ties break to the lowest index).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSurface {
    pub y: Vec<f64>,
    pub predicted: usize,
}

/// K x N Jacobian of the per-class error surface with respect to the
/// input features, evaluated at `base_input`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataJacobian {
    pub num_classes: usize,
    pub input_dim: usize,
    rows: Vec<f64>,
    pub base_input: Vec<f64>,
}

impl DataJacobian {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

pub(crate) struct ForwardTrace {
    /// Activations, `post[0]` is the input itself.
    pub post: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pub pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }
}

/// Per-layer parameter gradients, same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl FeedForwardModel {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        normalization: Normalization,
        layers: Vec<DenseLayer>,
    ) -> Result<Self> {
        let model = Self {
            input_dim,
            num_classes,
            normalization,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("model has no layers".into()));
        }
        self.normalization.validate()?;
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim != dim {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} expects input of {}, previous produces {}",
                    i, layer.in_dim, dim
                )));
            }
            dim = layer.out_dim;
        }
        let last = self.layers.last().unwrap();
        if last.out_dim != self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "last layer produces {}, model declares {} classes",
                last.out_dim, self.num_classes
            )));
        }
        if last.activation != Activation::Identity {
            return Err(Error::InvalidConfig(
                "last layer must be identity (logit readout)".into(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "input of length {}, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut post = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.affine(post.last().unwrap());
            let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace { post, pre })
    }

    /// Logits for one (already normalized) input vector.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let trace = self.forward_trace(x.as_slice())?;
        Tensor::vector(trace.logits().to_vec())
    }

    /// Gradient with respect to the input given a seed gradient on the
    /// logits. Also returns per-layer parameter gradients when requested
    /// (the trainer path).
    pub(crate) fn backprop(
        &self,
        trace: &ForwardTrace,
        seed: &[f64],
        params: Option<&mut Vec<LayerGradient>>,
    ) -> Vec<f64> {
        let mut g = seed.to_vec();
        let mut param_sink = params;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // g currently holds d/d(post-activation of layer l)
            if layer.activation != Activation::Identity {
                for (gi, &zi) in g.iter_mut().zip(&trace.pre[l]) {
                    *gi *= layer.activation.derivative(zi);
                }
            }
            if let Some(sink) = param_sink.as_deref_mut() {
                let input = &trace.post[l];
                let lg = &mut sink[l];
                for i in 0..layer.out_dim {
                    let gi = g[i];
                    lg.bias[i] += gi;
                    let row = &mut lg.weights[i * layer.in_dim..(i + 1) * layer.in_dim];
                    for (w, &xj) in row.iter_mut().zip(input) {
                        *w += gi * xj;
                    }
                }
            }
            let mut prev = vec![0.0; layer.in_dim];
            for i in 0..layer.out_dim {
                let gi = g[i];
                if gi == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(layer.row(i)) {
                    *p += gi * w;
                }
            }
            g = prev;
        }
        g
    }

    pub(crate) fn zero_gradients(&self) -> Vec<LayerGradient> {
        self.layers
            .iter()
            .map(|l| LayerGradient {
                weights: vec![0.0; l.weights.len()],
                bias: vec![0.0; l.out_dim],
            })
            .collect()
    }

    /// Per-class error surface `y_i = -log softmax_i(logits)` with a
    /// numerically stable log-sum-exp.
    pub fn per_class_error(&self, x: &[f64]) -> Result<ErrorSurface> {
        let trace = self.forward_trace(x)?;
        Ok(error_surface_from_logits(trace.logits()))
    }

    pub fn predicted_class(&self, x: &[f64]) -> Result<usize> {
        Ok(self.per_class_error(x)?.predicted)
    }

    /// Exact reverse-mode gradient of `y[class_index]` with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], class_index: usize) -> Result<Vec<f64>> {
        if class_index >= self.num_classes {
            return Err(Error::DimensionMismatch(format!(
                "class index {} out of range for {} classes",
                class_index, self.num_classes
            )));
        }
        let trace = self.forward_trace(x)?;
        let probs = softmax(trace.logits());
        // d y_i / d z_k = p_k - [k == i]
        let mut seed = probs;
        seed[class_index] -= 1.0;
        Ok(self.backprop(&trace, &seed, None))
    }

    /// Full K x N Jacobian of the error surface: one forward pass, K
    /// reverse sweeps.
    pub fn data_jacobian(&self, x: &[f64]) -> Result<DataJacobian> {
        let trace = self.forward_trace(x)?;
        let probs = softmax(trace.logits());
        let mut rows = Vec::with_capacity(self.num_classes * self.input_dim);
        for i in 0..self.num_classes {
            let mut seed = probs.clone();
            seed[i] -= 1.0;
            rows.extend(self.backprop(&trace, &seed, None));
        }
        Ok(DataJacobian {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            rows,
            base_input: x.to_vec(),
        })
    }

    /// Jacobian of the raw logits (used by the linear-approximation
    /// residual diagnostic, where the logits are consumed directly).
    pub fn logits_jacobian(&self, x: &[f64]) -> Result<DataJacobian> {
        let trace = self.forward_trace(x)?;
        let mut rows = Vec::with_capacity(self.num_classes * self.input_dim);
        for i in 0..self.num_classes {
            let mut seed = vec![0.0; self.num_classes];
            seed[i] = 1.0;
            rows.extend(self.backprop(&trace, &seed, None));
        }
        Ok(DataJacobian {
            num_classes: self.num_classes,
            input_dim: self.input_dim,
            rows,
            base_input: x.to_vec(),
        })
    }

    /// Residual of the first-order approximation of the error surface:
    /// `y(x + dx) - y(x) - DJM(x) dx`.
    pub fn linear_residual_errors(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        let base = self.per_class_error(x)?;
        let shifted = self.per_class_error(&add(x, dx))?;
        let jac = self.data_jacobian(x)?;
        Ok((0..self.num_classes)
            .map(|i| shifted.y[i] - base.y[i] - dot(jac.row(i), dx))
            .collect())
    }

    /// Same residual with the logits consumed directly; exactly zero for a
    /// purely linear (identity-activation) model.
    pub fn linear_residual_logits(&self, x: &[f64], dx: &[f64]) -> Result<Vec<f64>> {
        let base = self.forward_trace(x)?;
        let shifted = self.forward_trace(&add(x, dx))?;
        let jac = self.logits_jacobian(x)?;
        Ok((0..self.num_classes)
            .map(|i| shifted.logits()[i] - base.logits()[i] - dot(jac.row(i), dx))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn add(x: &[f64], dx: &[f64]) -> Vec<f64> {
    x.iter().zip(dx).map(|(a, b)| a + b).collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn error_surface_from_logits(logits: &[f64]) -> ErrorSurface {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let y: Vec<f64> = logits.iter().map(|&z| lse - z).collect();
    let predicted = argmin(&y);
    ErrorSurface { y, predicted }
}

/// Lowest index wins on ties.
pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}
