//! Log-linear policy over a response pair and its DPO objective.
//!
//! With `log pi_theta(y|x) = theta^T phi(x, y) - log Z(x)` and a zero reference
//! parameter, the DPO log-ratio difference between the two responses is
//! `beta * theta^T (phi_1 - phi_2)`; the partition functions cancel. DPO then
//! reduces to logistic regression on `beta * (phi_p - phi_np)`.

use serde::{Deserialize, Serialize};

use crate::data::PreferencePair;
use crate::error::{Error, Result};
use crate::math::{dot_diff, log_sigmoid, sigmoid};
use crate::mechanisms::BinaryLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    /// DPO temperature.
    pub beta: f64,
}

impl PolicyParams {
    pub fn new(theta: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be finite and positive, got {beta}"),
            });
        }
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "theta has a non-finite entry".into(),
            ));
        }
        Ok(Self { theta, beta })
    }

    pub fn zeros(d: usize, beta: f64) -> Result<Self> {
        Self::new(vec![0.0; d], beta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

fn check_dim<P: PreferencePair>(params: &PolicyParams, sample: &P) -> Result<()> {
    let (d, d1, d2) = (params.dim(), sample.phi_1().len(), sample.phi_2().len());
    if d != d1 || d != d2 {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: theta has {d}, sample {} has ({d1}, {d2})",
            sample.sample_id()
        )));
    }
    Ok(())
}

/// Implicit reward margin `beta * theta^T (phi_1 - phi_2)`, oriented toward
/// response 1.
pub fn margin<P: PreferencePair>(params: &PolicyParams, sample: &P) -> Result<f64> {
    check_dim(params, sample)?;
    Ok(raw_margin(params, sample))
}

#[inline]
pub(crate) fn raw_margin<P: PreferencePair>(params: &PolicyParams, sample: &P) -> f64 {
    params.beta * dot_diff(&params.theta, sample.phi_1(), sample.phi_2())
}

/// Deterministic ranking: `1` iff the margin is strictly positive.
pub fn predict_label<P: PreferencePair>(params: &PolicyParams, sample: &P) -> Result<BinaryLabel> {
    margin(params, sample).map(|m| BinaryLabel::from_bool(m > 0.0))
}

pub fn predict_labels<P: PreferencePair>(
    params: &PolicyParams,
    samples: &[P],
) -> Result<Vec<BinaryLabel>> {
    samples.iter().map(|s| predict_label(params, s)).collect()
}

/// `+1` when response 1 is the preferred one.
#[inline]
pub(crate) fn orientation(label: BinaryLabel) -> f64 {
    if label.is_one() {
        1.0
    } else {
        -1.0
    }
}

fn check_batch<P: PreferencePair>(
    params: &PolicyParams,
    pairs: &[P],
    labels: &[BinaryLabel],
) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if pairs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} samples but {} labels",
            pairs.len(),
            labels.len()
        )));
    }
    pairs.iter().try_for_each(|p| check_dim(params, p))
}

/// Mean DPO loss `-ln sigmoid(beta * theta^T (phi_p - phi_np))`, with the
/// preferred response chosen by `labels`.
pub fn dpo_loss<P: PreferencePair>(
    params: &PolicyParams,
    pairs: &[P],
    labels: &[BinaryLabel],
) -> Result<f64> {
    check_batch(params, pairs, labels)?;
    Ok(loss_unchecked(params, pairs, labels))
}

pub(crate) fn loss_unchecked<P: PreferencePair>(
    params: &PolicyParams,
    pairs: &[P],
    labels: &[BinaryLabel],
) -> f64 {
    let total: f64 = pairs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -log_sigmoid(orientation(l) * raw_margin(params, p)))
        .sum();
    total / pairs.len() as f64
}

/// Adds one sample's loss gradient into `out`.
///
/// The gradient is `-sigmoid(-m) * beta * s * (phi_1 - phi_2)` with `s = ±1`
/// the orientation and `m = s * margin`.
#[inline]
pub(crate) fn add_example_gradient<P: PreferencePair>(
    params: &PolicyParams,
    pair: &P,
    label: BinaryLabel,
    out: &mut [f64],
) {
    let s = orientation(label);
    let coef = -sigmoid(-s * raw_margin(params, pair)) * params.beta * s;
    for ((g, a), b) in out.iter_mut().zip(pair.phi_1()).zip(pair.phi_2()) {
        *g += coef * (a - b);
    }
}

/// Exact gradient of [`dpo_loss`] with respect to `theta`.
pub fn dpo_gradient<P: PreferencePair>(
    params: &PolicyParams,
    pairs: &[P],
    labels: &[BinaryLabel],
) -> Result<Vec<f64>> {
    check_batch(params, pairs, labels)?;
    let mut grad = vec![0.0; params.dim()];
    for (p, &l) in pairs.iter().zip(labels) {
        add_example_gradient(params, p, l, &mut grad);
    }
    let n = pairs.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}
