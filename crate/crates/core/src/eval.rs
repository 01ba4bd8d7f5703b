//! Ground-truth-aware measurement. This module and the oracle gate are the
//! only consumers of `l*` and `theta_star` outside data generation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditSnapshot, ReadPurpose};
use crate::data::{OracleGate, PreferencePair, PreferenceSample};
use crate::error::{Error, Result};
use crate::math::{dot, dot_diff};
use crate::mechanisms::{disagreement_rate, BinaryLabel};
use crate::policy::{predict_labels, PolicyParams};
use crate::trainers::StageDiagnostics;

/// `||theta_hat - theta_star||_2`.
pub fn suboptimality_gap(theta_hat: &[f64], theta_star: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            theta_hat.len(),
            theta_star.len()
        )));
    }
    Ok(theta_hat
        .iter()
        .zip(theta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Fraction of held-out samples whose predicted label equals `l*`.
pub fn label_accuracy(params: &PolicyParams, heldout: &[PreferenceSample]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let predicted = predict_labels(params, heldout)?;
    let truth = OracleGate::new(heldout).labels(ReadPurpose::Evaluation);
    Ok(1.0 - disagreement_rate(&predicted, &truth)?)
}

/// Mean XOR between two label sequences.
pub fn empirical_flip_rate(labels_a: &[BinaryLabel], labels_b: &[BinaryLabel]) -> Result<f64> {
    disagreement_rate(labels_a, labels_b)
}

/// Outcome shares of a pairwise comparison; they sum to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinTieLoss {
    pub win: f64,
    pub tie: f64,
    pub loss: f64,
}

impl WinTieLoss {
    pub fn win_plus_tie(&self) -> f64 {
        self.win + self.tie
    }

    pub fn swapped(&self) -> Self {
        Self {
            win: self.loss,
            tie: self.tie,
            loss: self.win,
        }
    }
}

/// Judges two policies by the true reward of the response each one picks.
///
/// Per sample each policy picks response 1 iff its margin is positive. Equal
/// picks tie; otherwise the pick with strictly higher reward
/// `theta_star^T phi` wins (equal rewards tie).
pub fn simulated_win_rate<P: PreferencePair>(
    theta_a: &[f64],
    theta_b: &[f64],
    heldout: &[P],
    theta_star: &[f64],
) -> Result<WinTieLoss> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let d = theta_star.len();
    if theta_a.len() != d || theta_b.len() != d {
        return Err(Error::InvalidArgument(
            "policy and reward dimensions differ".into(),
        ));
    }
    let (mut win, mut tie, mut loss) = (0usize, 0usize, 0usize);
    for s in heldout {
        if s.phi_1().len() != d || s.phi_2().len() != d {
            return Err(Error::InvalidArgument(format!(
                "sample {} does not have dimension {d}",
                s.sample_id()
            )));
        }
        let pick_a = dot_diff(theta_a, s.phi_1(), s.phi_2()) > 0.0;
        let pick_b = dot_diff(theta_b, s.phi_1(), s.phi_2()) > 0.0;
        if pick_a == pick_b {
            tie += 1;
            continue;
        }
        let reward = |first: bool| dot(theta_star, if first { s.phi_1() } else { s.phi_2() });
        let (ra, rb) = (reward(pick_a), reward(pick_b));
        if ra > rb {
            win += 1;
        } else if rb > ra {
            loss += 1;
        } else {
            tie += 1;
        }
    }
    let n = heldout.len() as f64;
    Ok(WinTieLoss {
        win: win as f64 / n,
        tie: tie as f64 / n,
        loss: loss as f64 / n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nonprivate,
    Rr,
    Dpsgd,
    Props,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nonprivate => "nonprivate",
            Method::Rr => "rr",
            Method::Dpsgd => "dpsgd",
            Method::Props => "props",
        }
    }

    /// Whether the method's guarantee rests on label privatization, so that
    /// `l*` must never be read outside evaluation.
    pub fn is_label_private(self) -> bool {
        matches!(self, Method::Rr | Method::Props)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pairwise comparison against a named opponent trained in the same cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub opponent: Method,
    pub opponent_epsilon: Option<f64>,
    /// Stage count of a PROPS opponent.
    pub opponent_stages: Option<usize>,
    pub win: f64,
    pub tie: f64,
    pub loss: f64,
    pub win_plus_tie: f64,
}

impl Comparison {
    pub fn new(
        opponent: Method,
        opponent_epsilon: Option<f64>,
        opponent_stages: Option<usize>,
        wtl: WinTieLoss,
    ) -> Self {
        Self {
            opponent,
            opponent_epsilon,
            opponent_stages,
            win: wtl.win,
            tie: wtl.tie,
            loss: wtl.loss,
            win_plus_tie: wtl.win_plus_tie(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub world: u64,
    pub run: u64,
}

/// Privacy cost of one run at preference and labeler level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    /// Largest number of training labels from one labeler.
    pub labeler_k: u64,
    pub delta_prime: f64,
    pub labeler_basic: f64,
    pub labeler_advanced: f64,
    /// DP-SGD noise multiplier.
    pub sigma: Option<f64>,
}

/// One trained model and its measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub method: Method,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub stages: Option<usize>,
    pub theta_hat: Vec<f64>,
    pub gap: f64,
    pub label_accuracy: f64,
    pub win_tie_loss: Vec<Comparison>,
    pub stage_diagnostics: Vec<StageDiagnostics>,
    pub privacy: Option<PrivacyReport>,
    /// `l*` reads made while the run trained and was evaluated.
    pub audit: AuditSnapshot,
    pub seeds: Seeds,
    pub runtime_ms: u64,
}

impl RunResult {
    /// `gap` recomputed from `theta_hat`; differs from the stored value by
    /// floating-point noise at most.
    pub fn recompute_gap(&self, theta_star: &[f64]) -> Result<f64> {
        suboptimality_gap(&self.theta_hat, theta_star)
    }
}
