//! Label-level privacy mechanisms.
//!
//! Binary randomized response (RR), the maximum-likelihood combiner that fuses
//! an RR label with a model-predicted label, and the estimator that recovers
//! the model's error rate from RR/model disagreements.
//!
//! With `l_rr = l* ^ U`, `U ~ Bern(gamma_eps)` and `l_model = l* ^ V`,
//! `V ~ Bern(gamma_model)` independent, the log-likelihood ratio of
//! `l* = 0` against `l* = 1` is
//!
//! ```text
//! Λ = (-1)^l_rr · ln((1 - γ_ε)/γ_ε) + (-1)^l_model · ln((1 - γ_M)/γ_M)
//! ```
//!
//! and the combined label is `1` iff `Λ <= 0`.

use std::fmt;
use std::ops::Not;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};

/// Lower and upper clamp for an estimated model error rate. Keeps the
/// combiner's log-odds finite.
pub const GAMMA_CLAMP_MIN: f64 = 1e-4;
pub const GAMMA_CLAMP_MAX: f64 = 0.5 - 1e-4;

/// A binary preference label. `One` means response 1 is preferred.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum BinaryLabel {
    Zero,
    One,
}

impl BinaryLabel {
    pub fn from_bool(one: bool) -> Self {
        if one {
            BinaryLabel::One
        } else {
            BinaryLabel::Zero
        }
    }

    pub fn is_one(self) -> bool {
        self == BinaryLabel::One
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// `(-1)^label`: `+1` for `Zero`, `-1` for `One`.
    pub fn sign(self) -> f64 {
        match self {
            BinaryLabel::Zero => 1.0,
            BinaryLabel::One => -1.0,
        }
    }
}

impl Not for BinaryLabel {
    type Output = BinaryLabel;

    fn not(self) -> BinaryLabel {
        match self {
            BinaryLabel::Zero => BinaryLabel::One,
            BinaryLabel::One => BinaryLabel::Zero,
        }
    }
}

impl From<BinaryLabel> for u8 {
    fn from(label: BinaryLabel) -> u8 {
        label.as_u8()
    }
}

impl TryFrom<u8> for BinaryLabel {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            0 => Ok(BinaryLabel::Zero),
            1 => Ok(BinaryLabel::One),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// RR flip probability `1 / (1 + e^epsilon)`.
pub fn flip_probability(epsilon: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(invalid_param(
            "epsilon",
            format!("must be finite and >= 0, got {epsilon}"),
        ));
    }
    Ok(1.0 / (1.0 + epsilon.exp()))
}

/// Parameters of binary randomized response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RRParams {
    epsilon: f64,
    gamma_eps: f64,
}

impl RRParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        Ok(Self {
            epsilon,
            gamma_eps: flip_probability(epsilon)?,
        })
    }

    /// The `epsilon -> infinity` limit: no label is ever flipped.
    pub fn disabled() -> Self {
        Self {
            epsilon: f64::INFINITY,
            gamma_eps: 0.0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma_eps(&self) -> f64 {
        self.gamma_eps
    }

    pub fn is_disabled(&self) -> bool {
        self.gamma_eps == 0.0
    }
}

/// Flips each label independently with probability `gamma_eps`.
///
/// Exactly one uniform draw is consumed per label, in sequence order.
pub fn randomized_response<R: Rng + ?Sized>(
    labels: &[BinaryLabel],
    params: &RRParams,
    rng: &mut R,
) -> Vec<BinaryLabel> {
    labels
        .iter()
        .map(|&label| flip_one(label, params.gamma_eps, rng))
        .collect()
}

#[inline]
pub(crate) fn flip_one<R: Rng + ?Sized>(
    label: BinaryLabel,
    gamma: f64,
    rng: &mut R,
) -> BinaryLabel {
    let u: f64 = rng.random();
    if u < gamma {
        !label
    } else {
        label
    }
}

/// Noise rates of the two label sources fed to the combiner. Both must lie
/// strictly inside `(0, 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinerParams {
    gamma_eps: f64,
    gamma_model: f64,
}

impl CombinerParams {
    pub fn new(gamma_eps: f64, gamma_model: f64) -> Result<Self> {
        check_open_rate("gamma_eps", gamma_eps)?;
        check_open_rate("gamma_model", gamma_model)?;
        Ok(Self {
            gamma_eps,
            gamma_model,
        })
    }

    pub fn gamma_eps(&self) -> f64 {
        self.gamma_eps
    }

    pub fn gamma_model(&self) -> f64 {
        self.gamma_model
    }
}

fn check_open_rate(name: &'static str, gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(invalid_param(
            name,
            format!("must lie strictly inside (0, 0.5), got {gamma}"),
        ));
    }
    Ok(())
}

/// `ln((1 - gamma) / gamma)`.
pub fn log_odds(gamma: f64) -> f64 {
    ((1.0 - gamma) / gamma).ln()
}

/// Log-likelihood ratio of `l* = 0` against `l* = 1` given both observations.
pub fn mle_statistic(l_rr: BinaryLabel, l_model: BinaryLabel, params: &CombinerParams) -> f64 {
    l_rr.sign() * log_odds(params.gamma_eps) + l_model.sign() * log_odds(params.gamma_model)
}

/// MLE label: `1` iff the statistic is `<= 0` (ties go to `1`).
pub fn props_label(
    l_rr: BinaryLabel,
    l_model: BinaryLabel,
    params: &CombinerParams,
) -> BinaryLabel {
    BinaryLabel::from_bool(mle_statistic(l_rr, l_model, params) <= 0.0)
}

/// Fraction of positions where the two label sequences differ.
pub fn disagreement_rate(l_model: &[BinaryLabel], l_rr: &[BinaryLabel]) -> Result<f64> {
    if l_model.len() != l_rr.len() {
        return Err(Error::InvalidArgument(format!(
            "label sequences differ in length: {} vs {}",
            l_model.len(),
            l_rr.len()
        )));
    }
    if l_model.is_empty() {
        return Err(Error::InvalidArgument("label sequences are empty".into()));
    }
    let disagreements = l_model.iter().zip(l_rr).filter(|(a, b)| a != b).count();
    Ok(disagreements as f64 / l_model.len() as f64)
}

/// Unclamped estimate `(mu - gamma_eps) / (1 - 2 gamma_eps)` of the model's
/// error rate. Unbiased when RR and model errors are independent.
pub fn estimate_model_error_raw(mu: f64, gamma_eps: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(invalid_param("mu", format!("must lie in [0, 1], got {mu}")));
    }
    if !gamma_eps.is_finite() || gamma_eps < 0.0 {
        return Err(invalid_param(
            "gamma_eps",
            format!("must lie in [0, 0.5), got {gamma_eps}"),
        ));
    }
    if gamma_eps >= 0.5 {
        return Err(Error::EstimatorUndefined { gamma_eps });
    }
    Ok((mu - gamma_eps) / (1.0 - 2.0 * gamma_eps))
}

/// Estimated model error rate, clamped to
/// `[GAMMA_CLAMP_MIN, GAMMA_CLAMP_MAX]`.
pub fn estimate_model_error(mu: f64, gamma_eps: f64) -> Result<f64> {
    estimate_model_error_raw(mu, gamma_eps).map(clamp_gamma)
}

pub fn clamp_gamma(gamma: f64) -> f64 {
    gamma.clamp(GAMMA_CLAMP_MIN, GAMMA_CLAMP_MAX)
}
