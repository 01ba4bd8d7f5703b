//! Result files and the summary table derived from them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use props_core::{Method, RunResult};
use serde::Serialize;

use crate::harness::{cmp_opt, CellFailure, Outcome};

/// One row per (method, epsilon, K) group and opponent. Groups without
/// comparisons get a single row with empty opponent columns.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub method: Method,
    pub epsilon: Option<f64>,
    pub stages: Option<usize>,
    pub runs: usize,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub label_accuracy_mean: f64,
    pub opponent: Option<Method>,
    pub opponent_epsilon: Option<f64>,
    pub opponent_stages: Option<usize>,
    pub win: Option<f64>,
    pub tie: Option<f64>,
    pub loss: Option<f64>,
    pub win_plus_tie: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

type GroupKey = (Method, Option<f64>, Option<usize>);

fn cmp_key(a: &GroupKey, b: &GroupKey) -> std::cmp::Ordering {
    a.0.as_str()
        .cmp(b.0.as_str())
        .then_with(|| cmp_opt(a.1, b.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Aggregates results that all come from one config.
pub fn summarize(results: &[RunResult]) -> Result<Vec<SummaryRow>> {
    let Some(first) = results.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = results.iter().find(|r| r.config_hash != first.config_hash) {
        bail!(
            "refusing to mix results of configs {} and {}",
            first.config_hash,
            other.config_hash
        );
    }
    let mut groups: Vec<(GroupKey, Vec<&RunResult>)> = Vec::new();
    for r in results {
        let key = (r.method, r.epsilon, r.stages);
        match groups.iter_mut().find(|(k, _)| cmp_key(k, &key).is_eq()) {
            Some((_, members)) => members.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups.sort_by(|a, b| cmp_key(&a.0, &b.0));

    let mut rows = Vec::new();
    for (_, members) in groups {
        let gaps: Vec<f64> = members.iter().map(|r| r.gap).collect();
        let accs: Vec<f64> = members.iter().map(|r| r.label_accuracy).collect();
        let base = SummaryRow {
            config_hash: first.config_hash.clone(),
            method: members[0].method,
            epsilon: members[0].epsilon,
            stages: members[0].stages,
            runs: members.len(),
            gap_mean: mean(&gaps),
            gap_std: std_dev(&gaps),
            label_accuracy_mean: mean(&accs),
            opponent: None,
            opponent_epsilon: None,
            opponent_stages: None,
            win: None,
            tie: None,
            loss: None,
            win_plus_tie: None,
        };
        let mut opponents: Vec<(GroupKey, Vec<[f64; 4]>)> = Vec::new();
        for c in members.iter().flat_map(|r| &r.win_tie_loss) {
            let key = (c.opponent, c.opponent_epsilon, c.opponent_stages);
            let value = [c.win, c.tie, c.loss, c.win_plus_tie];
            match opponents.iter_mut().find(|(k, _)| cmp_key(k, &key).is_eq()) {
                Some((_, v)) => v.push(value),
                None => opponents.push((key, vec![value])),
            }
        }
        opponents.sort_by(|a, b| cmp_key(&a.0, &b.0));
        if opponents.is_empty() {
            rows.push(base);
            continue;
        }
        for ((opponent, eps, stages), values) in opponents {
            let col = |i: usize| Some(mean(&values.iter().map(|v| v[i]).collect::<Vec<_>>()));
            rows.push(SummaryRow {
                opponent: Some(opponent),
                opponent_epsilon: eps,
                opponent_stages: stages,
                win: col(0),
                tie: col(1),
                loss: col(2),
                win_plus_tie: col(3),
                ..base.clone()
            });
        }
    }
    Ok(rows)
}

pub fn results_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("results-{hash}.jsonl"))
}

pub fn summary_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("summary-{hash}.csv"))
}

pub fn failures_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("failures-{hash}.jsonl"))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Files written for one outcome.
#[derive(Debug)]
pub struct Written {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub failures: Option<PathBuf>,
}

pub fn write_outcome(dir: &Path, outcome: &Outcome) -> Result<Written> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = &outcome.config_hash;
    let results = results_path(dir, hash);
    write_jsonl(&results, &outcome.results)?;
    let summary = summary_path(dir, hash);
    write_summary(&summary, &summarize(&outcome.results)?)?;
    let failures = failures_path(dir, hash);
    let failures = if outcome.failures.is_empty() {
        // a stale file from an earlier run would misreport this one
        if failures.exists() {
            std::fs::remove_file(&failures)?;
        }
        None
    } else {
        write_jsonl::<CellFailure>(&failures, &outcome.failures)?;
        Some(failures)
    };
    Ok(Written {
        results,
        summary,
        failures,
    })
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

/// Human-readable comparison table, grouped by epsilon.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut epsilons: Vec<Option<f64>> = rows.iter().map(|r| r.epsilon).collect();
    epsilons.sort_by(|a, b| cmp_opt(*a, *b));
    epsilons.dedup();
    let mut out = String::new();
    for eps in epsilons {
        out.push_str(&format!("epsilon = {}\n", fmt_opt(eps)));
        let mut last = None;
        for r in rows.iter().filter(|r| r.epsilon == eps) {
            let name = match r.stages {
                Some(k) => format!("{} (K={k})", r.method),
                None => r.method.to_string(),
            };
            if last.as_ref() != Some(&name) {
                out.push_str(&format!(
                    "  {name:<14} runs {:>3}  gap {:.4} +- {:.4}  accuracy {:.4}\n",
                    r.runs, r.gap_mean, r.gap_std, r.label_accuracy_mean
                ));
                last = Some(name);
            }
            if let (Some(o), Some(w), Some(t), Some(l)) = (r.opponent, r.win, r.tie, r.loss) {
                let opp = match (r.opponent_epsilon, r.opponent_stages) {
                    (Some(e), Some(k)) => format!("{o} eps={e} K={k}"),
                    (Some(e), None) => format!("{o} eps={e}"),
                    _ => o.to_string(),
                };
                out.push_str(&format!(
                    "      vs {opp:<22} win {w:.3}  tie {t:.3}  loss {l:.3}\n"
                ));
            }
        }
    }
    out
}
