//! Replication running, aggregation, and file emission.
//!
//! Every output file embeds the config hash on its first line; aggregation
//! re-reads the written replication files and rejects a mismatched hash.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{run_estimation_observed, MetricsRecord};
use crate::harness::config::{ExperimentConfig, ExperimentPlan};
use crate::harness::naive::PerNodeAverages;

/// Environment variable capping concurrent replications.
pub const THREADS_ENV: &str = "BYZGRAD_THREADS";

/// One replication's trajectory plus terminal summary numbers.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub replication: u32,
    pub records: Vec<MetricsRecord>,
    /// `max_i |(A v - grad f)_i|` at the final iterate.
    pub final_error_linf: f64,
    pub final_error_l2: f64,
    /// Naive per-node averages of the broadcast observations.
    pub naive: Vec<Option<f64>>,
    /// `max_i |naive_i - grad_i|`; `None` when some node was never active.
    pub naive_error_linf: Option<f64>,
}

/// Across-replication mean/min/max per recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub k: u64,
    pub err_l2_mean: f64,
    pub err_l2_min: f64,
    pub err_l2_max: f64,
    pub err_linf_mean: f64,
    pub err_linf_min: f64,
    pub err_linf_max: f64,
    #[serde(rename = "J_mean")]
    pub j_mean: f64,
    #[serde(rename = "J_min")]
    pub j_min: f64,
    #[serde(rename = "J_max")]
    pub j_max: f64,
    pub zhat_err_mean: f64,
    pub zhat_err_min: f64,
    pub zhat_err_max: f64,
}

/// Full in-memory result of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub replications: Vec<ReplicationResult>,
    pub aggregate: Vec<AggregateRecord>,
    pub config_hash: String,
}

fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0), // rayon default
        Ok(text) => text.parse().map_err(|_| Error::Config {
            path: THREADS_ENV.to_string(),
            message: format!("expected a thread count, got {text:?}"),
        }),
    }
}

fn run_replication(plan: &ExperimentPlan, r: u32) -> Result<ReplicationResult> {
    let setup = plan.setup(r);
    let mut averages = PerNodeAverages::new(plan.partition.n());
    let outcome = run_estimation_observed(&setup, |round| averages.update(round))?;
    let naive = averages.estimate();
    let naive_error_linf = naive
        .iter()
        .enumerate()
        .map(|(i, est)| est.map(|e| (e - outcome.gradient[i]).abs()))
        .try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)));
    Ok(ReplicationResult {
        replication: r,
        records: outcome.records.clone(),
        final_error_linf: outcome.final_error_linf(),
        final_error_l2: (outcome.final_estimate() - &outcome.gradient).norm(),
        naive,
        naive_error_linf,
    })
}

/// Runs all replications (in parallel, capped by `BYZGRAD_THREADS`) and
/// aggregates; does not touch the filesystem.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let plan = config.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?)
        .build()
        .map_err(|e| Error::Config {
            path: THREADS_ENV.to_string(),
            message: e.to_string(),
        })?;
    let replications: Vec<ReplicationResult> = pool.install(|| {
        (0..plan.run.replications)
            .into_par_iter()
            .map(|r| run_replication(&plan, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let trajectories: Vec<&[MetricsRecord]> =
        replications.iter().map(|r| r.records.as_slice()).collect();
    let aggregate = aggregate_records(&trajectories)?;
    Ok(ExperimentResult {
        replications,
        aggregate,
        config_hash: plan.config_hash,
    })
}

/// Mean/min/max across replications at each recorded `k`. All trajectories
/// must share the same record grid.
pub fn aggregate_records(trajectories: &[&[MetricsRecord]]) -> Result<Vec<AggregateRecord>> {
    let first = trajectories.first().ok_or(Error::EmptyRounds)?;
    let rows = first.len();
    for t in trajectories {
        if t.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "trajectory length",
                expected: rows,
                got: t.len(),
            });
        }
    }
    let count = trajectories.len() as f64;
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let k = first[row].k;
        let mut agg = AggregateRecord {
            k,
            err_l2_mean: 0.0,
            err_l2_min: f64::INFINITY,
            err_l2_max: f64::NEG_INFINITY,
            err_linf_mean: 0.0,
            err_linf_min: f64::INFINITY,
            err_linf_max: f64::NEG_INFINITY,
            j_mean: 0.0,
            j_min: f64::INFINITY,
            j_max: f64::NEG_INFINITY,
            zhat_err_mean: 0.0,
            zhat_err_min: f64::INFINITY,
            zhat_err_max: f64::NEG_INFINITY,
        };
        for t in trajectories {
            let rec = &t[row];
            if rec.k != k {
                return Err(Error::DimensionMismatch {
                    context: "trajectory iteration grid",
                    expected: k as usize,
                    got: rec.k as usize,
                });
            }
            agg.err_l2_mean += rec.err_l2 / count;
            agg.err_l2_min = agg.err_l2_min.min(rec.err_l2);
            agg.err_l2_max = agg.err_l2_max.max(rec.err_l2);
            agg.err_linf_mean += rec.err_linf / count;
            agg.err_linf_min = agg.err_linf_min.min(rec.err_linf);
            agg.err_linf_max = agg.err_linf_max.max(rec.err_linf);
            agg.j_mean += rec.j / count;
            agg.j_min = agg.j_min.min(rec.j);
            agg.j_max = agg.j_max.max(rec.j);
            agg.zhat_err_mean += rec.zhat_err / count;
            agg.zhat_err_min = agg.zhat_err_min.min(rec.zhat_err);
            agg.zhat_err_max = agg.zhat_err_max.max(rec.zhat_err);
        }
        out.push(agg);
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, hash: &str, rows: &[T]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# config_hash: {hash}")?;
    let mut writer = csv::Writer::from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_csv_with_hash<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>)> {
    let text = fs::read_to_string(path)?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| Error::Config {
        path: path.display().to_string(),
        message: "empty trajectory file".to_string(),
    })?;
    let hash = first
        .strip_prefix("# config_hash: ")
        .ok_or_else(|| Error::Config {
            path: path.display().to_string(),
            message: "missing config-hash line".to_string(),
        })?
        .to_string();
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let rows = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok((hash, rows))
}

/// Reads one trajectory CSV, returning its embedded hash and records.
pub fn read_trajectory_csv(path: &Path) -> Result<(String, Vec<MetricsRecord>)> {
    read_csv_with_hash(path)
}

/// Writes `config.json`, one `rep_XX.csv` per replication, and
/// `aggregate.csv` into `dir`. The aggregate is recomputed from the written
/// replication files after verifying each embedded hash.
pub fn write_experiment(
    dir: &Path,
    config: &ExperimentConfig,
    result: &ExperimentResult,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = serde_json::json!({
        "config_hash": result.config_hash,
        "config": config,
    });
    fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;

    let mut paths = Vec::new();
    for rep in &result.replications {
        let path = dir.join(format!("rep_{:02}.csv", rep.replication));
        write_csv(&path, &result.config_hash, &rep.records)?;
        paths.push(path);
    }

    let mut reread: Vec<Vec<MetricsRecord>> = Vec::new();
    for path in &paths {
        let (hash, records) = read_trajectory_csv(path)?;
        if hash != result.config_hash {
            return Err(Error::HashMismatch {
                file: path.display().to_string(),
                expected: result.config_hash.clone(),
                found: hash,
            });
        }
        reread.push(records);
    }
    let views: Vec<&[MetricsRecord]> = reread.iter().map(|r| r.as_slice()).collect();
    let aggregate = aggregate_records(&views)?;
    write_csv(&dir.join("aggregate.csv"), &result.config_hash, &aggregate)?;
    Ok(())
}
