//! Training procedures: non-private DPO, the RR-DPO and DP-SGD baselines, and
//! the K-stage progressively private orchestrator.
//!
//! Every trainer is a deterministic function of its inputs and seed. The
//! mini-batch order of each epoch is a Fisher-Yates shuffle drawn from a
//! ChaCha8 stream seeded by `TrainConfig::seed` (stream 0); DP-SGD noise comes
//! from stream 1 of the same seed, so switching the mechanism off leaves the
//! batch order untouched.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::accounting::GaussianMechanismParams;
use crate::audit::ReadPurpose;
use crate::data::{
    partition, privatize, OracleGate, PreferencePair, PreferenceSample, PrivatizedDataset,
};
use crate::error::{invalid_param, Error, Result};
use crate::mechanisms::{
    clamp_gamma, disagreement_rate, estimate_model_error, estimate_model_error_raw, props_label,
    BinaryLabel, CombinerParams,
};
use crate::policy::{add_example_gradient, loss_unchecked, predict_labels, PolicyParams};

const SHUFFLE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Starting point; zeros when absent.
    pub init_theta: Option<Vec<f64>>,
    /// DPO temperature of the trained policy.
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            epochs: 3,
            batch_size: 64,
            seed: 0,
            init_theta: None,
            beta: 5.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid_param(
                "learning_rate",
                "must be finite and positive",
            ));
        }
        if self.epochs == 0 {
            return Err(invalid_param("epochs", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(invalid_param(
                "batch_size",
                format!("must lie in [1, n = {n}], got {}", self.batch_size),
            ));
        }
        Ok(())
    }

    fn initial_params(&self, d: usize) -> Result<PolicyParams> {
        match &self.init_theta {
            Some(theta) if theta.len() != d => Err(Error::InvalidArgument(format!(
                "init_theta has length {} but features have d = {d}",
                theta.len()
            ))),
            Some(theta) => PolicyParams::new(theta.clone(), self.beta),
            None => PolicyParams::zeros(d, self.beta),
        }
    }
}

fn feature_dim<P: PreferencePair>(pairs: &[P]) -> Result<usize> {
    pairs
        .first()
        .map(|p| p.phi_1().len())
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))
}

/// Mini-batch gradient descent on the mean DPO loss.
pub fn train_dpo<P: PreferencePair>(
    pairs: &[P],
    labels: &[BinaryLabel],
    config: &TrainConfig,
) -> Result<PolicyParams> {
    let init = config.initial_params(feature_dim(pairs)?)?;
    train_dpo_from(pairs, labels, config, init)
}

/// [`train_dpo`] from an explicit starting point (`config.init_theta` is
/// ignored).
pub fn train_dpo_from<P: PreferencePair>(
    pairs: &[P],
    labels: &[BinaryLabel],
    config: &TrainConfig,
    init: PolicyParams,
) -> Result<PolicyParams> {
    run_sgd(pairs, labels, config, init, None, &mut |_, _| {})
}

/// [`train_dpo`] calling `observer(step, params)` after every update.
pub fn train_dpo_observed<P: PreferencePair>(
    pairs: &[P],
    labels: &[BinaryLabel],
    config: &TrainConfig,
    observer: &mut dyn FnMut(usize, &PolicyParams),
) -> Result<PolicyParams> {
    let init = config.initial_params(feature_dim(pairs)?)?;
    run_sgd(pairs, labels, config, init, None, observer)
}

/// DP-SGD: per-example gradients clipped to L2 norm `C`, summed, perturbed by
/// `N(0, sigma^2 C^2 I)` and divided by the batch size.
pub fn train_dpsgd<P: PreferencePair>(
    pairs: &[P],
    labels: &[BinaryLabel],
    config: &TrainConfig,
    mechanism: &GaussianMechanismParams,
) -> Result<PolicyParams> {
    if mechanism.clip_threshold.is_nan() || mechanism.clip_threshold < 0.0 {
        return Err(invalid_param("clip_threshold", "must be >= 0"));
    }
    if mechanism.sigma.is_nan() || mechanism.sigma < 0.0 {
        return Err(invalid_param("sigma", "must be >= 0"));
    }
    let init = config.initial_params(feature_dim(pairs)?)?;
    run_sgd(pairs, labels, config, init, Some(mechanism), &mut |_, _| {})
}

fn run_sgd<P: PreferencePair>(
    pairs: &[P],
    labels: &[BinaryLabel],
    config: &TrainConfig,
    mut params: PolicyParams,
    mechanism: Option<&GaussianMechanismParams>,
    observer: &mut dyn FnMut(usize, &PolicyParams),
) -> Result<PolicyParams> {
    let n = pairs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} samples but {} labels",
            labels.len()
        )));
    }
    config.validate(n)?;
    let d = params.dim();
    if let Some(bad) = pairs
        .iter()
        .find(|p| p.phi_1().len() != d || p.phi_2().len() != d)
    {
        return Err(Error::InvalidArgument(format!(
            "sample {} does not have dimension {d}",
            bad.sample_id()
        )));
    }

    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = vec![0.0; d];
    let mut example = vec![0.0; d];
    let mut step = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(config.batch_size) {
            sum.iter_mut().for_each(|g| *g = 0.0);
            match mechanism {
                None => {
                    for &i in batch {
                        add_example_gradient(&params, &pairs[i], labels[i], &mut sum);
                    }
                }
                Some(mech) => {
                    for &i in batch {
                        example.iter_mut().for_each(|g| *g = 0.0);
                        add_example_gradient(&params, &pairs[i], labels[i], &mut example);
                        clip_in_place(&mut example, mech.clip_threshold);
                        sum.iter_mut().zip(&example).for_each(|(s, g)| *s += g);
                    }
                    add_gaussian_noise(&mut sum, noise_std(mech), &mut noise_rng);
                }
            }
            let size = batch.len() as f64;
            for (theta, g) in params.theta.iter_mut().zip(&sum) {
                *theta -= config.learning_rate * (g / size);
            }
            step += 1;
            if !params.theta.iter().all(|v| v.is_finite()) {
                return Err(Error::TrainingDiverged {
                    step,
                    loss: loss_unchecked(&params, pairs, labels),
                });
            }
            observer(step, &params);
        }
    }

    let loss = loss_unchecked(&params, pairs, labels);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { step, loss });
    }
    Ok(params)
}

fn clip_in_place(g: &mut [f64], threshold: f64) {
    if threshold == f64::INFINITY {
        return;
    }
    let norm = crate::math::norm(g);
    if norm > threshold {
        let scale = threshold / norm;
        g.iter_mut().for_each(|v| *v *= scale);
    }
}

/// `sigma * C`, taking `sigma = 0` as no noise even when `C` is infinite.
fn noise_std(mech: &GaussianMechanismParams) -> f64 {
    if mech.sigma == 0.0 {
        0.0
    } else {
        mech.sigma * mech.clip_threshold
    }
}

fn add_gaussian_noise<R: Rng>(sum: &mut [f64], std_dev: f64, rng: &mut R) {
    if std_dev == 0.0 {
        return;
    }
    for v in sum.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += std_dev * z;
    }
}

/// Source of the model error rate fed to the combiner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaModelMode {
    /// Estimated from RR/model disagreements; the only privacy-preserving
    /// mode.
    #[default]
    Estimated,
    /// Measured against `l*` through the oracle gate. Validation only.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropsConfig {
    /// Number of stages `K >= 2`.
    pub stages: usize,
    pub epsilon: f64,
    /// One config for all stages, or exactly one per stage.
    pub stage_train: Vec<TrainConfig>,
    #[serde(default)]
    pub gamma_model_mode: GammaModelMode,
}

impl PropsConfig {
    pub fn new(stages: usize, epsilon: f64, train: TrainConfig) -> Self {
        Self {
            stages,
            epsilon,
            stage_train: vec![train],
            gamma_model_mode: GammaModelMode::Estimated,
        }
    }

    pub fn with_gamma_mode(self, gamma_model_mode: GammaModelMode) -> Self {
        Self {
            gamma_model_mode,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return Err(invalid_param(
                "stages",
                format!("K must be >= 2, got {}", self.stages),
            ));
        }
        if !(self.stage_train.len() == 1 || self.stage_train.len() == self.stages) {
            return Err(invalid_param(
                "stage_train",
                format!(
                    "need 1 or {} entries, got {}",
                    self.stages,
                    self.stage_train.len()
                ),
            ));
        }
        Ok(())
    }

    /// Training config of stage `k` (1-based). A shared config gets its seed
    /// offset by `k - 1` so stages draw distinct batch orders.
    pub fn stage_config(&self, k: usize) -> TrainConfig {
        if self.stage_train.len() == 1 {
            let mut cfg = self.stage_train[0].clone();
            cfg.seed = cfg.seed.wrapping_add(k as u64 - 1);
            cfg
        } else {
            self.stage_train[k - 1].clone()
        }
    }
}

/// How a stage produced its training labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLabelSource {
    /// First stage: RR labels, no prior model.
    RandomizedResponse,
    /// MLE combination of RR and model labels.
    MleCombined,
    /// `gamma_eps = 0.5` (epsilon = 0): estimator undefined, RR labels used.
    RrFallbackEstimatorUndefined,
    /// `gamma_eps = 0`: RR labels are exact and win every combination.
    RrNoiseless,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostics {
    pub stage_index: usize,
    pub n: usize,
    pub label_source: StageLabelSource,
    /// Clamped model error rate used by the combiner.
    pub gamma_hat: Option<f64>,
    /// Unclamped estimate (estimated mode only).
    pub gamma_hat_raw: Option<f64>,
    /// Fraction of RR/model disagreements on this stage's partition.
    pub disagreement_mu: Option<f64>,
    pub labels_changed_vs_rr: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropsOutcome {
    pub params: PolicyParams,
    pub stages: Vec<StageDiagnostics>,
}

/// Privatizes `world` once and runs [`run_props_on`]. In oracle mode the
/// ground truth of `world` is read through the audited gate.
pub fn run_props<R: Rng + ?Sized>(
    world: &[PreferenceSample],
    config: &PropsConfig,
    rng: &mut R,
) -> Result<PropsOutcome> {
    config.validate()?;
    let private = privatize(world, config.epsilon, rng)?;
    let oracle = match config.gamma_model_mode {
        GammaModelMode::Estimated => None,
        GammaModelMode::Oracle => Some(OracleGate::new(world)),
    };
    run_props_on(&private, config, oracle)
}

/// The K-stage procedure on an already privatized dataset.
///
/// Stage 1 trains on the RR labels of the first partition. Each later stage
/// ranks its partition with the previous model, combines those rankings with
/// the RR labels by maximum likelihood, and continues training from the
/// previous parameters.
pub fn run_props_on(
    private: &PrivatizedDataset,
    config: &PropsConfig,
    oracle: Option<OracleGate<'_>>,
) -> Result<PropsOutcome> {
    config.validate()?;
    if config.gamma_model_mode == GammaModelMode::Oracle && oracle.is_none() {
        return Err(Error::InvalidArgument(
            "oracle gamma mode requires an oracle gate".into(),
        ));
    }
    let samples = private.samples();
    let k_stages = config.stages;
    if samples.len() < k_stages {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot fill {k_stages} stages",
            samples.len()
        )));
    }
    if let Some(gate) = &oracle {
        if gate.samples().len() != samples.len() {
            return Err(Error::InvalidArgument(
                "oracle gate does not cover the dataset".into(),
            ));
        }
    }
    let parts = partition(samples, k_stages)?;
    let oracle_parts = match &oracle {
        Some(gate) => Some(partition(gate.samples(), k_stages)?),
        None => None,
    };
    let gamma_eps = private.gamma_eps();

    let first = parts[0];
    let first_labels: Vec<BinaryLabel> = first.iter().map(|s| s.label_rr()).collect();
    let mut params = train_dpo(first, &first_labels, &config.stage_config(1))?;
    let mut stages = vec![StageDiagnostics {
        stage_index: 1,
        n: first.len(),
        label_source: StageLabelSource::RandomizedResponse,
        gamma_hat: None,
        gamma_hat_raw: None,
        disagreement_mu: None,
        labels_changed_vs_rr: 0,
    }];

    for k in 2..=k_stages {
        let part = parts[k - 1];
        let l_rr: Vec<BinaryLabel> = part.iter().map(|s| s.label_rr()).collect();
        let l_model = predict_labels(&params, part)?;
        let mu = disagreement_rate(&l_model, &l_rr)?;

        let (labels, source, gamma_hat, gamma_hat_raw) = if gamma_eps == 0.0 {
            (l_rr.clone(), StageLabelSource::RrNoiseless, None, None)
        } else if gamma_eps >= 0.5 {
            (
                l_rr.clone(),
                StageLabelSource::RrFallbackEstimatorUndefined,
                None,
                None,
            )
        } else {
            let (gamma_model, raw) = match config.gamma_model_mode {
                GammaModelMode::Estimated => (
                    estimate_model_error(mu, gamma_eps)?,
                    Some(estimate_model_error_raw(mu, gamma_eps)?),
                ),
                GammaModelMode::Oracle => {
                    let gate =
                        OracleGate::new(oracle_parts.as_ref().expect("checked above")[k - 1]);
                    let truth = gate.labels(ReadPurpose::OracleGamma);
                    (clamp_gamma(disagreement_rate(&l_model, &truth)?), None)
                }
            };
            let combiner = CombinerParams::new(gamma_eps, gamma_model)?;
            let combined = l_rr
                .iter()
                .zip(&l_model)
                .map(|(&rr, &m)| props_label(rr, m, &combiner))
                .collect();
            (
                combined,
                StageLabelSource::MleCombined,
                Some(gamma_model),
                raw,
            )
        };

        let changed = labels.iter().zip(&l_rr).filter(|(a, b)| a != b).count();
        params = train_dpo_from(part, &labels, &config.stage_config(k), params)?;
        stages.push(StageDiagnostics {
            stage_index: k,
            n: part.len(),
            label_source: source,
            gamma_hat,
            gamma_hat_raw,
            disagreement_mu: Some(mu),
            labels_changed_vs_rr: changed,
        });
    }

    Ok(PropsOutcome { params, stages })
}

/// One RR pass, then DPO on the full privatized dataset.
pub fn run_rr_baseline<R: Rng + ?Sized>(
    world: &[PreferenceSample],
    epsilon: f64,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<PolicyParams> {
    let private = privatize(world, epsilon, rng)?;
    run_rr_baseline_on(&private, config)
}

pub fn run_rr_baseline_on(
    private: &PrivatizedDataset,
    config: &TrainConfig,
) -> Result<PolicyParams> {
    train_dpo(private.samples(), &private.labels_rr(), config)
}

/// DPO on the true labels, read through the oracle gate.
pub fn run_nonprivate(world: &[PreferenceSample], config: &TrainConfig) -> Result<PolicyParams> {
    let labels = OracleGate::new(world).labels(ReadPurpose::Training);
    train_dpo(world, &labels, config)
}

/// DP-SGD on the true labels; privacy comes from the gradient noise.
pub fn run_dpsgd(
    world: &[PreferenceSample],
    config: &TrainConfig,
    mechanism: &GaussianMechanismParams,
) -> Result<PolicyParams> {
    let labels = OracleGate::new(world).labels(ReadPurpose::Training);
    train_dpsgd(world, &labels, config, mechanism)
}
