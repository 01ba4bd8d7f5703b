//! Experiment configuration read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use props_core::{GammaModelMode, GaussianMechanismParams, Method, TrainConfig, WorldParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_DELTA_PRIME: f64 = 1e-5;
pub const DEFAULT_CLIP: f64 = 1.0;
pub const DPSGD_LEARNING_RATE: f64 = 0.1;
pub const DPSGD_EPOCHS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub world: WorldParams,
    pub methods: Vec<MethodSpec>,
    pub epsilons: Vec<f64>,
    /// Stage counts for PROPS; `run` takes exactly one, `sweep` any number.
    #[serde(default = "default_stages")]
    pub stages: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_heldout")]
    pub heldout_fraction: f64,
    /// Slack of the labeler-level advanced composition.
    #[serde(default = "default_delta_prime")]
    pub delta_prime: f64,
}

fn default_stages() -> Vec<usize> {
    vec![2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_heldout() -> f64 {
    0.2
}

fn default_delta_prime() -> f64 {
    DEFAULT_DELTA_PRIME
}

/// A method and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub train: TrainOverrides,
    /// DP-SGD only.
    pub delta: Option<f64>,
    /// DP-SGD only.
    pub clip_threshold: Option<f64>,
    /// PROPS only.
    pub gamma_model_mode: Option<GammaModelMode>,
}

/// Training settings that replace the per-method defaults when given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    /// DPO temperature; defaults to the world's `beta_gen`.
    pub beta: Option<f64>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            train: TrainOverrides::default(),
            delta: None,
            clip_threshold: None,
            gamma_model_mode: None,
        }
    }

    /// Effective training config for one seed.
    pub fn train_config(&self, world: &WorldParams, seed: u64) -> TrainConfig {
        let mut config = TrainConfig {
            seed,
            beta: world.beta_gen,
            ..TrainConfig::default()
        };
        if self.method == Method::Dpsgd {
            config.learning_rate = DPSGD_LEARNING_RATE;
            config.epochs = DPSGD_EPOCHS;
        }
        let o = &self.train;
        if let Some(v) = o.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = o.epochs {
            config.epochs = v;
        }
        if let Some(v) = o.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = o.beta {
            config.beta = v;
        }
        config
    }

    pub fn mechanism(&self, epsilon: f64) -> props_core::Result<GaussianMechanismParams> {
        GaussianMechanismParams::new(
            epsilon,
            self.delta.unwrap_or(DEFAULT_DELTA),
            self.clip_threshold.unwrap_or(DEFAULT_CLIP),
        )
    }

    pub fn gamma_mode(&self) -> GammaModelMode {
        self.gamma_model_mode.unwrap_or_default()
    }

    /// Whether a run of this spec carries a label-privacy claim.
    pub fn claims_label_privacy(&self) -> bool {
        self.method.is_label_private() && self.gamma_mode() == GammaModelMode::Estimated
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate().context("world")?;
        if self.methods.is_empty() {
            bail!("methods: at least one method is required");
        }
        if self.epsilons.is_empty() {
            bail!("epsilons: at least one epsilon is required");
        }
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        if self.stages.is_empty() {
            bail!("stages: at least one stage count is required");
        }
        let mut seen = BTreeSet::new();
        for spec in &self.methods {
            if !seen.insert(spec.method) {
                bail!("methods: `{}` is listed twice", spec.method);
            }
            if spec.method != Method::Dpsgd
                && (spec.delta.is_some() || spec.clip_threshold.is_some())
            {
                bail!(
                    "methods.{}: delta and clip_threshold apply to dpsgd only",
                    spec.method
                );
            }
            if spec.method != Method::Props && spec.gamma_model_mode.is_some() {
                bail!(
                    "methods.{}: gamma_model_mode applies to props only",
                    spec.method
                );
            }
        }
        for &eps in &self.epsilons {
            if !(eps >= 0.0 && eps.is_finite()) {
                bail!("epsilons: {eps} is not a finite value >= 0");
            }
        }
        if let Some(k) = self.stages.iter().find(|&&k| k < 2) {
            bail!("stages: K must be >= 2, got {k}");
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            bail!(
                "heldout_fraction: must lie in (0, 1), got {}",
                self.heldout_fraction
            );
        }
        if !(self.delta_prime > 0.0 && self.delta_prime < 1.0) {
            bail!("delta_prime: must lie in (0, 1), got {}", self.delta_prime);
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form. The output directory is
    /// excluded so moving results does not change their identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn spec(&self, method: Method) -> Option<&MethodSpec> {
        self.methods.iter().find(|s| s.method == method)
    }
}
