//! Privacy bookkeeping: preference-level to labeler-level composition and the
//! Gaussian noise multiplier used by DP-SGD. All logarithms are natural.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::HasLabeler;
use crate::error::{invalid_param, Error, Result};

/// An `(epsilon, delta)` guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxBudget {
    pub epsilon: f64,
    pub delta: f64,
}

/// Preference-level budget of one labeler who contributed `k` labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelerBudget {
    pub epsilon_pref: f64,
    pub k: u64,
    pub delta_prime: f64,
}

impl LabelerBudget {
    pub fn new(epsilon_pref: f64, k: u64, delta_prime: f64) -> Result<Self> {
        check_epsilon(epsilon_pref)?;
        check_k(k)?;
        check_unit_open("delta_prime", delta_prime)?;
        Ok(Self {
            epsilon_pref,
            k,
            delta_prime,
        })
    }

    pub fn basic(&self) -> f64 {
        self.k as f64 * self.epsilon_pref
    }

    pub fn advanced(&self) -> ApproxBudget {
        advanced_closed_form(self.epsilon_pref, self.k, self.delta_prime)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(invalid_param(
            "epsilon",
            format!("must be finite and >= 0, got {epsilon}"),
        ));
    }
    Ok(())
}

fn check_k(k: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

fn check_unit_open(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value < 1.0) {
        return Err(invalid_param(
            name,
            format!("must lie in (0, 1), got {value}"),
        ));
    }
    Ok(())
}

/// `(k*eps, 0)` labeler-level guarantee from `(eps, 0)` per label.
pub fn basic_composition(epsilon: f64, k: u64) -> Result<f64> {
    check_epsilon(epsilon)?;
    check_k(k)?;
    Ok(k as f64 * epsilon)
}

/// Advanced composition: `k*eps^2 + eps*sqrt(2k ln(1/delta'))` with slack
/// `delta'`.
pub fn advanced_composition(epsilon: f64, k: u64, delta_prime: f64) -> Result<ApproxBudget> {
    check_epsilon(epsilon)?;
    check_k(k)?;
    check_unit_open("delta_prime", delta_prime)?;
    Ok(advanced_closed_form(epsilon, k, delta_prime))
}

fn advanced_closed_form(epsilon: f64, k: u64, delta_prime: f64) -> ApproxBudget {
    let k = k as f64;
    ApproxBudget {
        epsilon: k * epsilon * epsilon + epsilon * (2.0 * k * (1.0 / delta_prime).ln()).sqrt(),
        delta: delta_prime,
    }
}

/// Gaussian-mechanism noise multiplier `sqrt(2 ln(1.25/delta)) / epsilon`.
pub fn dpsgd_noise_scale(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid_param(
            "epsilon",
            format!("must be finite and > 0, got {epsilon}"),
        ));
    }
    check_unit_open("delta", delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// DP-SGD release parameters; `sigma` is derived from `(epsilon, delta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanismParams {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_threshold: f64,
    pub sigma: f64,
}

impl GaussianMechanismParams {
    pub fn new(epsilon: f64, delta: f64, clip_threshold: f64) -> Result<Self> {
        if clip_threshold.is_nan() || clip_threshold < 0.0 {
            return Err(invalid_param(
                "clip_threshold",
                format!("must be >= 0, got {clip_threshold}"),
            ));
        }
        Ok(Self {
            epsilon,
            delta,
            clip_threshold,
            sigma: dpsgd_noise_scale(epsilon, delta)?,
        })
    }

    /// Mechanism switched off: no clipping, no noise.
    pub fn disabled() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 0.0,
            clip_threshold: f64::INFINITY,
            sigma: 0.0,
        }
    }

    /// Overrides the noise multiplier, keeping the clip threshold.
    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn with_clip_threshold(self, clip_threshold: f64) -> Self {
        Self {
            clip_threshold,
            ..self
        }
    }
}

/// Largest number of samples attributed to a single labeler.
pub fn max_labeler_contribution<S: HasLabeler>(dataset: &[S]) -> Result<u64> {
    if dataset.is_empty() {
        return Err(Error::InvalidDataset("dataset is empty".into()));
    }
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for (i, sample) in dataset.iter().enumerate() {
        let id = sample.labeler_id().ok_or_else(|| {
            Error::InvalidDataset(format!("sample at position {i} has no labeler id"))
        })?;
        *counts.entry(id).or_default() += 1;
    }
    Ok(counts.into_values().max().unwrap_or(0))
}
