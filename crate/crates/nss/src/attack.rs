//! Fix-directional adversarial attacks: the direction `V` is generated once
//! per input and only the scalar noise level varies, `perturbed = x + eps*V`.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::net::FeedForwardModel;
use crate::tensor::l2_norm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Fgm,
    Gaussian,
    Uniform,
}

impl AttackKind {
    pub fn is_gradient_based(self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::Fgm)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "fgm" => Ok(AttackKind::Fgm),
            "gaussian" => Ok(AttackKind::Gaussian),
            "uniform" => Ok(AttackKind::Uniform),
            other => Err(Error::InvalidConfig(format!(
                "unknown attack kind '{other}' (expected fgsm|fgm|gaussian|uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Fgm => "fgm",
            AttackKind::Gaussian => "gaussian",
            AttackKind::Uniform => "uniform",
        };
        f.write_str(s)
    }
}

/// The fixed adversarial vector `V` plus how it was generated.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackDirection {
    v: Vec<f64>,
    pub kind: AttackKind,
    /// Class whose error gradient generated the direction (gradient kinds).
    pub source_class: Option<usize>,
    /// RNG seed (noise kinds).
    pub seed: Option<u64>,
}

impl AttackDirection {
    fn build(
        v: Vec<f64>,
        kind: AttackKind,
        source_class: Option<usize>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if v.iter().all(|&e| e == 0.0) {
            return Err(Error::DirectionRejected(format!(
                "{kind} direction is the zero vector (flat error surface)"
            )));
        }
        Ok(Self {
            v,
            kind,
            source_class,
            seed,
        })
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// `v / ||v||_2`.
    pub fn unit(&self) -> Vec<f64> {
        let norm = l2_norm(&self.v);
        self.v.iter().map(|e| e / norm).collect()
    }

    /// Same direction, rescaled to the given L2 length. Keeps noise levels
    /// comparable across attacks whose raw vectors differ in magnitude
    /// (e.g. a gradient vs a sign vector).
    pub fn rescaled_to_l2(&self, target_norm: f64) -> Self {
        let scale = target_norm / l2_norm(&self.v);
        Self {
            v: self.v.iter().map(|e| e * scale).collect(),
            kind: self.kind,
            source_class: self.source_class,
            seed: self.seed,
        }
    }
}

/// `V = sign(d y_t / d x)` at the predicted class `t`, with `sign(0) = 0`.
pub fn fgsm_direction(model: &FeedForwardModel, x: &[f64]) -> Result<AttackDirection> {
    let t = model.predicted_class(x)?;
    let grad = model.input_gradient(x, t)?;
    let v = grad
        .iter()
        .map(|&g| {
            if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    AttackDirection::build(v, AttackKind::Fgsm, Some(t), None)
}

/// `V = d y_t / d x`, the raw error gradient at the predicted class.
pub fn fgm_direction(model: &FeedForwardModel, x: &[f64]) -> Result<AttackDirection> {
    let t = model.predicted_class(x)?;
    let v = model.input_gradient(x, t)?;
    AttackDirection::build(v, AttackKind::Fgm, Some(t), None)
}

/// I.i.d. standard normal direction, deterministic per seed.
pub fn gaussian_direction(n: usize, seed: u64) -> Result<AttackDirection> {
    if n == 0 {
        return Err(Error::InvalidConfig("direction dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    AttackDirection::build(v, AttackKind::Gaussian, None, Some(seed))
}

/// I.i.d. uniform direction on [-1, 1], deterministic per seed.
pub fn uniform_direction(n: usize, seed: u64) -> Result<AttackDirection> {
    if n == 0 {
        return Err(Error::InvalidConfig("direction dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let v = (0..n).map(|_| rng.sample(dist)).collect();
    AttackDirection::build(v, AttackKind::Uniform, None, Some(seed))
}

/// Noise budget: the initial level and the increasing ladder of allowable
/// maxima swept by `first_successful_level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub epsilon_0: f64,
    pub mu_levels: Vec<f64>,
}

impl NoiseBudget {
    pub fn new(epsilon_0: f64, mu_levels: Vec<f64>) -> Result<Self> {
        if mu_levels.is_empty() {
            return Err(Error::InvalidConfig("mu_levels must be non-empty".into()));
        }
        if !(epsilon_0 >= 0.0 && epsilon_0 <= mu_levels[0]) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_0 = {} must satisfy 0 <= epsilon_0 <= mu_levels[0] = {}",
                epsilon_0, mu_levels[0]
            )));
        }
        if !mu_levels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "mu_levels must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            epsilon_0,
            mu_levels,
        })
    }
}

/// `x + epsilon * V`. No clipping; see [`clip`] for the optional range clamp.
pub fn perturb(x: &[f64], direction: &AttackDirection, epsilon: f64) -> Vec<f64> {
    x.iter()
        .zip(direction.v())
        .map(|(&xi, &vi)| xi + epsilon * vi)
        .collect()
}

pub fn clip(x: &mut [f64], lo: f64, hi: f64) {
    for v in x {
        *v = v.clamp(lo, hi);
    }
}

/// Walks the budget's `mu_levels` in increasing order and returns the first
/// level whose perturbation flips the prediction, plus the new class.
///
/// Precondition: the input survived the initial level, i.e. the prediction
/// at `x + epsilon_0 * V` equals the clean prediction.
pub fn first_successful_level(
    model: &FeedForwardModel,
    x: &[f64],
    direction: &AttackDirection,
    budget: &NoiseBudget,
) -> Result<Option<(f64, usize)>> {
    let clean = model.predicted_class(x)?;
    let at_start = model.predicted_class(&perturb(x, direction, budget.epsilon_0))?;
    if at_start != clean {
        return Err(Error::NotASurvivor);
    }
    for &mu in &budget.mu_levels {
        let pred = model.predicted_class(&perturb(x, direction, mu))?;
        if pred != clean {
            return Ok(Some((mu, pred)));
        }
    }
    Ok(None)
}

/// Fine-grid scan for the minimal successful epsilon in `(from, to]`.
/// A grid rather than bisection: misclassification is not monotone in
/// epsilon along a fixed direction.
pub fn first_successful_epsilon_grid(
    model: &FeedForwardModel,
    x: &[f64],
    direction: &AttackDirection,
    from: f64,
    to: f64,
    step: f64,
) -> Result<Option<(f64, usize)>> {
    if step <= 0.0 {
        return Err(Error::InvalidConfig("grid step must be positive".into()));
    }
    let clean = model.predicted_class(x)?;
    let mut eps = from + step;
    while eps <= to + 1e-12 {
        let pred = model.predicted_class(&perturb(x, direction, eps))?;
        if pred != clean {
            return Ok(Some((eps, pred)));
        }
        eps += step;
    }
    Ok(None)
}
