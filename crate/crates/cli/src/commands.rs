//! Subcommands other than the run harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use props_core::audit::ReadPurpose;
use props_core::{
    advanced_composition, basic_composition, dpsgd_noise_scale, label_accuracy, load_dataset,
    max_labeler_contribution, save_dataset, suboptimality_gap, Method, OracleGate, PolicyParams,
};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::harness::world_for_seed;
use crate::report::{read_results, summarize, SummaryRow};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    /// Share of samples whose true label is 1.
    pub label_balance: f64,
}

/// Writes the world of `seed` (default: the first configured seed).
pub fn generate(
    config: &ExperimentConfig,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<GenerateSummary> {
    config.validate()?;
    let seed = seed.unwrap_or(config.seeds[0]);
    let world = world_for_seed(config, seed)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => config.output_dir.join(format!("world-{seed}.jsonl")),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    save_dataset(&path, &world).with_context(|| format!("writing {}", path.display()))?;
    let labels = OracleGate::new(&world.samples).labels(ReadPurpose::Evaluation);
    let ones = labels.iter().filter(|l| l.is_one()).count();
    Ok(GenerateSummary {
        path,
        seed,
        n: world.header.n,
        d: world.header.d,
        label_balance: ones as f64 / labels.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccountRequest {
    pub epsilon: f64,
    pub k: Option<u64>,
    pub delta_prime: f64,
    pub delta: Option<f64>,
    /// Takes `k` from the busiest labeler of this dataset.
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccountReport {
    pub epsilon: f64,
    pub k: u64,
    pub delta_prime: f64,
    pub labeler_basic: f64,
    pub labeler_advanced: f64,
    pub delta: Option<f64>,
    pub dpsgd_sigma: Option<f64>,
}

pub fn account(req: &AccountRequest) -> Result<AccountReport> {
    let k = match (&req.dataset, req.k) {
        (Some(_), Some(_)) => bail!("give either --k or --dataset, not both"),
        (Some(path), None) => {
            let world = load_dataset(path)?;
            max_labeler_contribution(&world.samples)?
        }
        (None, Some(k)) => k,
        (None, None) => 1,
    };
    let advanced = advanced_composition(req.epsilon, k, req.delta_prime)?;
    let dpsgd_sigma = req
        .delta
        .map(|d| dpsgd_noise_scale(req.epsilon, d))
        .transpose()?;
    Ok(AccountReport {
        epsilon: req.epsilon,
        k,
        delta_prime: req.delta_prime,
        labeler_basic: basic_composition(req.epsilon, k)?,
        labeler_advanced: advanced.epsilon,
        delta: req.delta,
        dpsgd_sigma,
    })
}

impl AccountReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "preference-level epsilon   {}\n\
             labels per labeler (k)     {}\n\
             labeler-level basic        {}\n\
             labeler-level advanced     {} (delta' = {})\n",
            self.epsilon, self.k, self.labeler_basic, self.labeler_advanced, self.delta_prime
        );
        if let (Some(sigma), Some(delta)) = (self.dpsgd_sigma, self.delta) {
            s.push_str(&format!(
                "dp-sgd noise multiplier    {sigma} (delta = {delta})\n"
            ));
        }
        s
    }
}

/// A stored model re-scored against a world file.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Rescore {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub stages: Option<usize>,
    pub seed: u64,
    pub gap: f64,
    pub label_accuracy: f64,
}

pub fn eval(results: &Path, world: &Path, heldout_fraction: f64) -> Result<Vec<Rescore>> {
    let records = read_results(results)?;
    let world = load_dataset(world)?;
    let (_, heldout) = world.split_heldout(heldout_fraction)?;
    records
        .iter()
        .map(|r| {
            let params = PolicyParams::new(r.theta_hat.clone(), 1.0)?;
            Ok(Rescore {
                method: r.method,
                epsilon: r.epsilon,
                stages: r.stages,
                seed: r.seeds.run,
                gap: suboptimality_gap(&r.theta_hat, world.theta_star())?,
                label_accuracy: label_accuracy(&params, heldout)?,
            })
        })
        .collect()
}

/// Summary table of previously written result files.
pub fn aggregate(paths: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_results(p)?);
    }
    summarize(&all)
}
