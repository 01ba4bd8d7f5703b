//! Label-private preference alignment on a synthetic Bradley-Terry world.
//!
//! The crate provides randomized response over preference labels, a
//! maximum-likelihood combiner that fuses privatized labels with an
//! intermediate model's rankings, DPO training for a log-linear policy, the
//! RR-only and DP-SGD baselines, privacy accounting, and ground-truth-aware
//! evaluation.

pub mod accounting;
pub mod audit;
pub mod data;
pub mod error;
pub mod eval;
pub mod math;
pub mod mechanisms;
pub mod policy;
pub mod trainers;

pub use accounting::{
    advanced_composition, basic_composition, dpsgd_noise_scale, max_labeler_contribution,
    ApproxBudget, GaussianMechanismParams, LabelerBudget,
};
pub use data::{
    generate_world, load_dataset, partition, privatize, privatize_with, save_dataset, OracleGate,
    PreferencePair, PreferenceSample, PrivatizedDataset, PrivatizedSample, World, WorldHeader,
    WorldParams,
};
pub use error::{Error, Result};
pub use eval::{
    label_accuracy, simulated_win_rate, suboptimality_gap, Comparison, Method, PrivacyReport,
    RunResult, Seeds, WinTieLoss,
};
pub use mechanisms::{
    disagreement_rate, estimate_model_error, flip_probability, mle_statistic, props_label,
    randomized_response, BinaryLabel, CombinerParams, RRParams,
};
pub use policy::{dpo_gradient, dpo_loss, margin, predict_label, PolicyParams};
pub use trainers::{
    run_dpsgd, run_nonprivate, run_props, run_props_on, run_rr_baseline, run_rr_baseline_on,
    train_dpo, train_dpsgd, GammaModelMode, PropsConfig, PropsOutcome, StageDiagnostics,
    TrainConfig,
};

/// Stream for drawing a world from a run seed. Trainers use streams 0 and 1
/// of their own seed for batch order and gradient noise.
pub const WORLD_STREAM: u64 = 2;
/// Stream for randomized response from a run seed.
pub const PRIVATIZE_STREAM: u64 = 3;

/// Deterministic ChaCha8 stream for `seed`, optionally on a sub-stream.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
