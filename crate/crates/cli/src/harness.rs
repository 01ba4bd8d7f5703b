//! Runs every (method, epsilon, K, seed) cell of a config in a worker pool.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use props_core::audit::audited;
use props_core::{
    advanced_composition, basic_composition, generate_world, label_accuracy,
    max_labeler_contribution, run_dpsgd, run_nonprivate, run_props, run_rr_baseline, seeded_rng,
    simulated_win_rate, suboptimality_gap, Comparison, Method, PrivacyReport, PropsConfig,
    RunResult, Seeds, World, PRIVATIZE_STREAM, WORLD_STREAM,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    /// Every epsilon at a single stage count.
    Run,
    /// Every epsilon at every stage count.
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub stages: Option<usize>,
    pub seed: u64,
}

impl Cell {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.method
            .as_str()
            .cmp(other.method.as_str())
            .then_with(|| cmp_opt(self.epsilon, other.epsilon))
            .then_with(|| self.stages.cmp(&other.stages))
            .then_with(|| self.seed.cmp(&other.seed))
    }
}

pub(crate) fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        _ => a.is_some().cmp(&b.is_some()),
    }
}

/// A cell that did not produce a result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub stages: Option<usize>,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug)]
pub struct Outcome {
    pub config_hash: String,
    pub results: Vec<RunResult>,
    pub failures: Vec<CellFailure>,
}

/// Cells in lexicographic (method, epsilon, K, seed) order.
pub fn cells(config: &ExperimentConfig, grid: Grid) -> Result<Vec<Cell>> {
    if grid == Grid::Run && config.stages.len() > 1 {
        bail!(
            "stages: `run` takes one stage count, got {}; use `sweep` for several",
            config.stages.len()
        );
    }
    let mut out = Vec::new();
    for spec in &config.methods {
        let settings: Vec<(Option<f64>, Option<usize>)> = match spec.method {
            Method::Nonprivate => vec![(None, None)],
            Method::Rr | Method::Dpsgd => {
                config.epsilons.iter().map(|&e| (Some(e), None)).collect()
            }
            Method::Props => config
                .epsilons
                .iter()
                .flat_map(|&e| config.stages.iter().map(move |&k| (Some(e), Some(k))))
                .collect(),
        };
        for (epsilon, stages) in settings {
            for &seed in &config.seeds {
                out.push(Cell {
                    method: spec.method,
                    epsilon,
                    stages,
                    seed,
                });
            }
        }
    }
    out.sort_by(Cell::cmp_key);
    out.dedup();
    Ok(out)
}

pub fn world_for_seed(config: &ExperimentConfig, seed: u64) -> Result<World> {
    generate_world(&config.world, &mut seeded_rng(seed, WORLD_STREAM)).context("world")
}

/// Runs all cells. `jobs = None` uses one worker per core.
pub fn execute(config: &ExperimentConfig, grid: Grid, jobs: Option<usize>) -> Result<Outcome> {
    config.validate()?;
    let config_hash = config.hash();
    let cells = cells(config, grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;

    let mut seeds: Vec<u64> = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let worlds: BTreeMap<u64, World> = pool
        .install(|| {
            seeds
                .par_iter()
                .map(|&s| world_for_seed(config, s).map(|w| (s, w)))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .collect();

    let outcomes: Vec<Result<RunResult>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let spec = config.spec(cell.method).expect("cell built from config");
                run_cell(config, &config_hash, spec, cell, &worlds[&cell.seed])
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(CellFailure {
                method: cell.method,
                epsilon: cell.epsilon,
                stages: cell.stages,
                seed: cell.seed,
                error: format!("{e:#}"),
            }),
        }
    }
    add_comparisons(&mut results, &worlds, config.heldout_fraction)?;
    Ok(Outcome {
        config_hash,
        results,
        failures,
    })
}

/// Trains and evaluates one cell on the calling thread.
pub fn run_cell(
    config: &ExperimentConfig,
    config_hash: &str,
    spec: &MethodSpec,
    cell: &Cell,
    world: &World,
) -> Result<RunResult> {
    let start = Instant::now();
    let (train, heldout) = world.split_heldout(config.heldout_fraction)?;
    let train_config = spec.train_config(&config.world, cell.seed);
    let eps = cell.epsilon.unwrap_or(f64::INFINITY);

    let (trained, audit) = audited(|| -> Result<_> {
        let mut rng = seeded_rng(cell.seed, PRIVATIZE_STREAM);
        let (params, stages, mechanism) = match cell.method {
            Method::Nonprivate => (run_nonprivate(train, &train_config)?, Vec::new(), None),
            Method::Rr => (
                run_rr_baseline(train, eps, &train_config, &mut rng)?,
                Vec::new(),
                None,
            ),
            Method::Dpsgd => {
                let mech = spec.mechanism(eps)?;
                (
                    run_dpsgd(train, &train_config, &mech)?,
                    Vec::new(),
                    Some(mech),
                )
            }
            Method::Props => {
                let k = cell.stages.expect("props cells carry K");
                let props = PropsConfig::new(k, eps, train_config.clone())
                    .with_gamma_mode(spec.gamma_mode());
                let out = run_props(train, &props, &mut rng)?;
                (out.params, out.stages, None)
            }
        };
        let accuracy = label_accuracy(&params, heldout)?;
        Ok((params, stages, mechanism, accuracy))
    });
    let (params, stage_diagnostics, mechanism, accuracy) = trained?;

    if spec.claims_label_privacy() && audit.outside_eval() != 0 {
        bail!(
            "privacy audit: {} reads of l* outside evaluation in a label-private run",
            audit.outside_eval()
        );
    }

    let privacy = match cell.epsilon {
        Some(e) => {
            let k = max_labeler_contribution(train)?;
            Some(PrivacyReport {
                labeler_k: k,
                delta_prime: config.delta_prime,
                labeler_basic: basic_composition(e, k)?,
                labeler_advanced: advanced_composition(e, k, config.delta_prime)?.epsilon,
                sigma: mechanism.map(|m| m.sigma),
            })
        }
        None => None,
    };

    Ok(RunResult {
        config_hash: config_hash.to_string(),
        method: cell.method,
        epsilon: cell.epsilon,
        delta: mechanism.map(|m| m.delta),
        stages: cell.stages,
        gap: suboptimality_gap(&params.theta, world.theta_star())?,
        theta_hat: params.theta,
        label_accuracy: accuracy,
        win_tie_loss: Vec::new(),
        stage_diagnostics,
        privacy,
        audit,
        seeds: Seeds {
            world: cell.seed,
            run: cell.seed,
        },
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

/// Judges every pair of results that share a seed and an epsilon. A
/// non-private result is compared with every result of its seed.
fn add_comparisons(
    results: &mut [RunResult],
    worlds: &BTreeMap<u64, World>,
    heldout_fraction: f64,
) -> Result<()> {
    let mut all = Vec::with_capacity(results.len());
    for (i, r) in results.iter().enumerate() {
        let world = &worlds[&r.seeds.world];
        let (_, heldout) = world.split_heldout(heldout_fraction)?;
        let mut comparisons = Vec::new();
        for (j, o) in results.iter().enumerate() {
            let paired = r.epsilon.is_none() || o.epsilon.is_none() || r.epsilon == o.epsilon;
            if i == j || o.seeds.world != r.seeds.world || !paired {
                continue;
            }
            let wtl = simulated_win_rate(&r.theta_hat, &o.theta_hat, heldout, world.theta_star())?;
            comparisons.push(Comparison::new(o.method, o.epsilon, o.stages, wtl));
        }
        all.push(comparisons);
    }
    for (r, c) in results.iter_mut().zip(all) {
        r.win_tie_loss = c;
    }
    Ok(())
}
