//! Noise Sensitivity Score and the skewness-based dataset robustness
//! metric.
//!
//! For one input with error surface `y` (predicted class `t`) and rate of
//! change `s` along the attack direction, each competitor class `j` gets
//! the ratio `(y_j - y_t) / (s_t - s_j)`: the gap to close divided by the
//! closing speed. A non-positive speed can never cause that
//! misclassification, so the ratio is guarded to the maximum score `C`.
//! The NSS is the minimum over competitors; lower means easier to attack.

use serde::{Deserialize, Serialize};

use crate::attack::AttackDirection;
use crate::net::{ErrorSurface, FeedForwardModel};
use crate::tensor::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NssConfig {
    /// Maximum score C assigned to inputs a fix-directional attack cannot
    /// push toward a competitor.
    pub max_score: f64,
    /// Skewness threshold tau; only NSS values at or below it enter the
    /// dataset metric.
    pub skew_threshold: f64,
    /// Number of evaluation points for the multi-step rate of change.
    pub steps: usize,
}

impl Default for NssConfig {
    fn default() -> Self {
        Self {
            max_score: 100.0,
            skew_threshold: 5.0,
            steps: 1,
        }
    }
}

impl NssConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_score > 0.0 && self.skew_threshold > 0.0) {
            return Err(Error::InvalidConfig(
                "max_score and skew_threshold must be positive".into(),
            ));
        }
        if self.max_score <= self.skew_threshold {
            return Err(Error::InvalidConfig(format!(
                "max_score C = {} must exceed the skewness threshold tau = {}",
                self.max_score, self.skew_threshold
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Directional derivative of each per-class error along the unit attack
/// direction, taken from the input Jacobian at `eval_point`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateOfChange {
    pub s: Vec<f64>,
    pub eval_point: Vec<f64>,
    pub direction_unit: Vec<f64>,
}

/// Per-input sweep outcome: the NSS plus where (if anywhere) the attack
/// first succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NssRecord {
    pub input_index: usize,
    pub true_label: usize,
    pub clean_prediction: usize,
    pub nss_value: f64,
    pub minimizing_class: Option<usize>,
    pub first_success_mu: Option<f64>,
    pub misclassified_as: Option<usize>,
}

/// `s_i = DJM_i(eval_point) . v_hat`. The magnitude of the extra shift
/// cancels out of the estimate, so this is exactly the directional
/// derivative along the unit direction.
pub fn rate_of_change(
    model: &FeedForwardModel,
    x_perturbed: &[f64],
    direction: &AttackDirection,
) -> Result<RateOfChange> {
    let unit = direction.unit();
    rate_of_change_along(model, x_perturbed, unit)
}

fn rate_of_change_along(
    model: &FeedForwardModel,
    x_perturbed: &[f64],
    unit: Vec<f64>,
) -> Result<RateOfChange> {
    if unit.len() != model.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "direction of length {}, model expects {}",
            unit.len(),
            model.input_dim
        )));
    }
    let jac = model.data_jacobian(x_perturbed)?;
    let s = (0..model.num_classes)
        .map(|i| dot(jac.row(i), &unit))
        .collect();
    Ok(RateOfChange {
        s,
        eval_point: x_perturbed.to_vec(),
        direction_unit: unit,
    })
}

/// The NSS for one input, with the guarded minimizing competitor.
///
/// Competitors with zero closing speed are excluded (the gap can never
/// close); negative ratios are guarded to `C`; the final score is clamped
/// to at most `C`. The minimizing class is `None` whenever the score
/// saturates at `C`. Ties break to the lowest class index.
pub fn nss(
    surface: &ErrorSurface,
    rate: &RateOfChange,
    cfg: &NssConfig,
) -> Result<(f64, Option<usize>)> {
    cfg.validate()?;
    let k = surface.y.len();
    if k < 2 {
        return Err(Error::NoCompetingClass);
    }
    if rate.s.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "surface has {} classes, rate has {}",
            k,
            rate.s.len()
        )));
    }
    let t = surface.predicted;
    let c = cfg.max_score;
    let mut best = f64::INFINITY;
    let mut best_class = None;
    for j in 0..k {
        if j == t {
            continue;
        }
        let speed = rate.s[t] - rate.s[j];
        if speed == 0.0 {
            continue; // ratio would be +inf: this competitor is unreachable
        }
        let ratio = (surface.y[j] - surface.y[t]) / speed;
        let (value, class) = if ratio < 0.0 {
            (c, None)
        } else {
            (ratio, Some(j))
        };
        if value < best {
            best = value;
            best_class = class;
        }
    }
    if !best.is_finite() || best >= c {
        Ok((c, None))
    } else {
        Ok((best, best_class))
    }
}

/// NSS restricted to a single targeted competitor class.
pub fn nss_targeted(
    surface: &ErrorSurface,
    rate: &RateOfChange,
    target_class: usize,
    cfg: &NssConfig,
) -> Result<f64> {
    cfg.validate()?;
    if target_class == surface.predicted {
        return Err(Error::TargetIsPredicted);
    }
    if target_class >= surface.y.len() {
        return Err(Error::DimensionMismatch(format!(
            "target class {} out of range for {} classes",
            target_class,
            surface.y.len()
        )));
    }
    let t = surface.predicted;
    let speed = rate.s[t] - rate.s[target_class];
    if speed == 0.0 {
        return Ok(cfg.max_score);
    }
    let ratio = (surface.y[target_class] - surface.y[t]) / speed;
    if ratio < 0.0 {
        Ok(cfg.max_score)
    } else {
        Ok(ratio.min(cfg.max_score))
    }
}

/// Multi-step NSS: the rate of change is averaged over Jacobians taken at
/// `steps` evenly spaced points along the unit direction, which tracks the
/// surface's curvature over a large total shift better than a single
/// tangent. With `steps = 1` this is bit-identical to the single-step NSS
/// at `x`.
pub fn multi_step_nss(
    model: &FeedForwardModel,
    x: &[f64],
    direction: &AttackDirection,
    total_shift: f64,
    steps: usize,
    cfg: &NssConfig,
) -> Result<(f64, Option<usize>)> {
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    if total_shift <= 0.0 {
        return Err(Error::InvalidConfig("total_shift must be positive".into()));
    }
    let surface = model.per_class_error(x)?;
    let rate = averaged_rate_of_change(model, x, direction, total_shift, steps)?;
    nss(&surface, &rate, cfg)
}

/// Elementwise mean of the rate of change over `steps` evaluation points
/// `x + (m * total_shift / steps) * v_hat`, `m = 0..steps-1`.
pub fn averaged_rate_of_change(
    model: &FeedForwardModel,
    x: &[f64],
    direction: &AttackDirection,
    total_shift: f64,
    steps: usize,
) -> Result<RateOfChange> {
    let unit = direction.unit();
    let mut mean = vec![0.0; model.num_classes];
    for m in 0..steps {
        let shift = m as f64 * total_shift / steps as f64;
        let point: Vec<f64> = x.iter().zip(&unit).map(|(xi, ui)| xi + shift * ui).collect();
        let rate = rate_of_change_along(model, &point, unit.clone())?;
        for (acc, si) in mean.iter_mut().zip(&rate.s) {
            *acc += si;
        }
    }
    for v in &mut mean {
        *v /= steps as f64;
    }
    Ok(RateOfChange {
        s: mean,
        eval_point: x.to_vec(),
        direction_unit: unit,
    })
}

/// Adjusted Fisher-Pearson sample skewness with population moments:
/// `gamma = sqrt(n(n-1))/(n-2) * m3 / m2^(3/2)`.
pub fn sample_skewness(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: n });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / nf;
    if m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let g1 = m3 / m2.powf(1.5);
    Ok((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
}

/// Dataset robustness: sample skewness of the NSS values at or below the
/// threshold tau. Records saturated at C never survive the filter, which
/// is what makes the metric insensitive to the choice of C.
pub fn dataset_robustness(records: &[NssRecord], cfg: &NssConfig) -> Result<f64> {
    cfg.validate()?;
    let filtered: Vec<f64> = records
        .iter()
        .map(|r| r.nss_value)
        .filter(|&v| v <= cfg.skew_threshold)
        .collect();
    if filtered.len() < 3 {
        return Err(Error::InsufficientVulnerableSamples {
            got: filtered.len(),
        });
    }
    sample_skewness(&filtered)
}
