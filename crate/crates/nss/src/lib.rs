//! Noise Sensitivity Score: per-input adversarial robustness of small
//! feed-forward classifiers under fix-directional attacks.
//!
//! The pipeline: train (or load) an MLP, build one attack direction per
//! validation input (FGSM, FGM, or random noise), apply an initial noise
//! level, score the surviving inputs with the NSS (error gap over closing
//! speed, minimized over competitor classes), then sweep increasing noise
//! budgets and record where each input is first successfully attacked.
//! The skewness of the low-NSS tail summarizes dataset-level robustness.

pub mod attack;
pub mod data;
mod error;
pub mod metrics;
pub mod net;
pub mod report;
pub mod stats;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
